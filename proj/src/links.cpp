#include "ghme/links.hpp"

#include "ghme/errors.hpp"

#include <cmath>
#include <sstream>

namespace ghme {

Link Link::custom(std::string name, Callback cb, const Eigen::VectorXd& probe_u,
                  const Eigen::VectorXd& probe_theta) {
    if (!cb) fail(ErrorKind::domain, "custom link '" + name + "' has no callback");
    Link l(Kind::custom);
    l.name_ = std::move(name);
    l.cb_ = std::move(cb);

    const Eigen::RowVectorXd u = probe_u.transpose();
    const Value v = l.cb_(u, probe_theta);
    const Eigen::Index p = probe_theta.size();
    if (v.grad.size() != p || v.hess.rows() != p || v.hess.cols() != p)
        fail(ErrorKind::dimension, "custom link '" + l.name_ + "': derivative shapes do not match theta");

    // Central differences of value -> grad and grad -> hess.
    for (Eigen::Index k = 0; k < p; ++k) {
        const double h = 1e-5 * std::max(1.0, std::fabs(probe_theta[k]));
        Eigen::VectorXd up = probe_theta, dn = probe_theta;
        up[k] += h;
        dn[k] -= h;
        const Value vp = l.cb_(u, up);
        const Value vm = l.cb_(u, dn);
        const double g_fd = (vp.value - vm.value) / (2.0 * h);
        const Eigen::VectorXd h_fd = (vp.grad - vm.grad) / (2.0 * h);
        const double g_tol = 1e-5 * std::max(1.0, std::fabs(v.grad[k]));
        const double h_tol = 1e-5 * std::max(1.0, v.hess.col(k).cwiseAbs().maxCoeff());
        if (std::fabs(g_fd - v.grad[k]) > g_tol || (h_fd - v.hess.col(k)).cwiseAbs().maxCoeff() > h_tol) {
            std::ostringstream os;
            os << "custom link '" << l.name_ << "': derivative check failed at coordinate " << k;
            fail(ErrorKind::domain, os.str());
        }
    }
    return l;
}

std::string Link::name() const {
    switch (kind_) {
    case Kind::tanh_linear: return "tanh_linear";
    case Kind::linear: return "linear";
    case Kind::exp_linear: return "exp_linear";
    case Kind::zero: return "zero";
    case Kind::custom: return name_;
    }
    return "?";
}

void Link::index_derivs(double eta, double& f0, double& f1, double& f2) const {
    switch (kind_) {
    case Kind::tanh_linear: {
        f0 = std::tanh(eta);
        const double sech2 = 1.0 - f0 * f0;
        f1 = sech2;
        f2 = -2.0 * f0 * sech2;
        return;
    }
    case Kind::linear:
        f0 = eta;
        f1 = 1.0;
        f2 = 0.0;
        return;
    case Kind::exp_linear:
        f0 = f1 = f2 = std::exp(eta);
        return;
    case Kind::zero:
    case Kind::custom:
        f0 = f1 = f2 = 0.0;
        return;
    }
}

double Link::value(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                   const Eigen::Ref<const Eigen::VectorXd>& theta) const {
    if (kind_ == Kind::custom) return cb_(u, theta).value;
    if (kind_ == Kind::zero) return 0.0;
    double f0 = 0.0, f1 = 0.0, f2 = 0.0;
    index_derivs(u.dot(theta.transpose()), f0, f1, f2);
    return f0;
}

double Link::value_grad(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                        const Eigen::Ref<const Eigen::VectorXd>& theta,
                        Eigen::Ref<Eigen::VectorXd> grad) const {
    if (kind_ == Kind::custom) {
        const Value v = cb_(u, theta);
        grad = v.grad;
        return v.value;
    }
    if (kind_ == Kind::zero) {
        grad.setZero();
        return 0.0;
    }
    double f0 = 0.0, f1 = 0.0, f2 = 0.0;
    index_derivs(u.dot(theta.transpose()), f0, f1, f2);
    grad = f1 * u.transpose();
    return f0;
}

void Link::add_hessian(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                       const Eigen::Ref<const Eigen::VectorXd>& theta, double weight,
                       Eigen::Ref<Eigen::MatrixXd> out) const {
    if (kind_ == Kind::custom) {
        out += weight * cb_(u, theta).hess;
        return;
    }
    if (kind_ == Kind::zero || kind_ == Kind::linear) return;
    double f0 = 0.0, f1 = 0.0, f2 = 0.0;
    index_derivs(u.dot(theta.transpose()), f0, f1, f2);
    out.noalias() += (weight * f2) * (u.transpose() * u);
}

Link link_from_name(const std::string& name) {
    if (name == "tanh_linear" || name == "tanh") return Link::tanh_linear();
    if (name == "linear") return Link::linear();
    if (name == "exp_linear" || name == "exp") return Link::exp_linear();
    if (name == "zero") return Link::zero();
    fail(ErrorKind::config, "unknown link '" + name + "' (expected tanh_linear, linear, exp_linear or zero)");
}

}  // namespace ghme

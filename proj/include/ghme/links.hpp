#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace ghme {

// A scalar link f(u, theta) of a covariate row u and a parameter vector theta,
// with its first and second theta-derivatives. Built-in links are functions of
// the linear index u'theta; custom links supply callbacks.
class Link {
public:
    enum class Kind { tanh_linear, linear, exp_linear, zero, custom };

    struct Value {
        double value = 0.0;
        Eigen::VectorXd grad;
        Eigen::MatrixXd hess;
    };
    using Callback = std::function<Value(const Eigen::Ref<const Eigen::RowVectorXd>&,
                                         const Eigen::Ref<const Eigen::VectorXd>&)>;

    Link() = default;
    static Link tanh_linear() { return Link(Kind::tanh_linear); }
    static Link linear() { return Link(Kind::linear); }
    static Link exp_linear() { return Link(Kind::exp_linear); }
    static Link zero() { return Link(Kind::zero); }

    // Registers a user link. The derivatives are checked against central
    // differences at (probe_u, probe_theta); a mismatch throws a domain error.
    static Link custom(std::string name, Callback cb,
                       const Eigen::VectorXd& probe_u, const Eigen::VectorXd& probe_theta);

    Kind kind() const { return kind_; }
    std::string name() const;
    bool is_index() const { return kind_ != Kind::custom; }

    double value(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                 const Eigen::Ref<const Eigen::VectorXd>& theta) const;

    // Value and gradient; `grad` must be sized to theta.
    double value_grad(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                      const Eigen::Ref<const Eigen::VectorXd>& theta,
                      Eigen::Ref<Eigen::VectorXd> grad) const;

    // out += weight * d^2 f / dtheta^2
    void add_hessian(const Eigen::Ref<const Eigen::RowVectorXd>& u,
                     const Eigen::Ref<const Eigen::VectorXd>& theta, double weight,
                     Eigen::Ref<Eigen::MatrixXd> out) const;

private:
    explicit Link(Kind k) : kind_(k) {}

    // f(eta), f'(eta), f''(eta) for index links
    void index_derivs(double eta, double& f0, double& f1, double& f2) const;

    Kind kind_ = Kind::linear;
    std::string name_;
    Callback cb_;
};

// s(z, alpha) scales the random effect in the mean; sigma2(w, tau) is the
// conditional variance factor and must stay positive.
struct LinkSpec {
    Link s = Link::tanh_linear();
    Link sigma2 = Link::exp_linear();
};

Link link_from_name(const std::string& name);

}  // namespace ghme

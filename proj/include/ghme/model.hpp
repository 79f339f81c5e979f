#pragma once

#include "ghme/dist.hpp"
#include "ghme/links.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace ghme {

struct IndividualRecord {
    std::string id;
    Eigen::VectorXd y;
    Eigen::MatrixXd x;  // n_i x p_beta
    Eigen::MatrixXd z;  // n_i x p_alpha
    Eigen::MatrixXd w;  // n_i x p_tau

    Eigen::Index n() const { return y.size(); }
};

struct LongitudinalDataset {
    std::vector<IndividualRecord> records;

    std::size_t size() const { return records.size(); }
    std::size_t total_obs() const;
    Eigen::Index px() const;
    Eigen::Index pz() const;
    Eigen::Index pw() const;

    // Throws a data error naming the offending record.
    void validate() const;
};

// Whether lambda is estimated or held at a known value.
struct Family {
    bool fixed_lambda = false;
    double lambda = -0.5;

    static Family full() { return {}; }
    static Family fixed(double lam) { return {true, lam}; }
};

// Box Theta; the defaults are generous enough for every preset scenario.
struct Bounds {
    double beta = 50.0;
    double alpha = 50.0;
    double tau = 50.0;
    double lambda_lo = -20.0;
    double lambda_hi = 20.0;
    double scale_lo = 1e-6;  // delta and gamma
    double scale_hi = 100.0;
};

struct Theta {
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd tau;
    double lambda = 0.0;
    double delta = 1.0;
    double gamma = 1.0;

    dist::GigParams gig() const { return {lambda, delta, gamma}; }
};

// Maps Theta to the flat vector (beta, alpha, tau, [lambda], delta, gamma).
class ParamLayout {
public:
    ParamLayout() = default;
    ParamLayout(Eigen::Index pb, Eigen::Index pa, Eigen::Index pt, Family family);
    static ParamLayout of(const LongitudinalDataset& ds, Family family);

    Eigen::Index size() const { return size_; }
    Eigen::Index pb() const { return pb_; }
    Eigen::Index pa() const { return pa_; }
    Eigen::Index pt() const { return pt_; }
    Eigen::Index beta_at() const { return 0; }
    Eigen::Index alpha_at() const { return pb_; }
    Eigen::Index tau_at() const { return pb_ + pa_; }
    Eigen::Index lambda_at() const { return family_.fixed_lambda ? -1 : pb_ + pa_ + pt_; }
    Eigen::Index delta_at() const { return size_ - 2; }
    Eigen::Index gamma_at() const { return size_ - 1; }
    const Family& family() const { return family_; }

    Eigen::VectorXd pack(const Theta& th) const;
    Theta unpack(const Eigen::VectorXd& v) const;
    std::vector<std::string> names() const;

    Eigen::VectorXd lower(const Bounds& b) const;
    Eigen::VectorXd upper(const Bounds& b) const;
    bool inside(const Eigen::VectorXd& v, const Bounds& b) const;
    // Projects into the box shrunk by `margin` (relative for delta, gamma).
    Eigen::VectorXd clip(const Eigen::VectorXd& v, const Bounds& b, double margin) const;

private:
    Eigen::Index pb_ = 0, pa_ = 0, pt_ = 0, size_ = 0;
    Family family_;
};

struct AbPair {
    double a = 0.0;  // sqrt(gamma^2 + sum s^2 / sigma^2)
    double b = 0.0;  // sqrt(delta^2 + sum r^2 / sigma^2)
};

AbPair compute_ab(const IndividualRecord& rec, const Theta& th, const LinkSpec& links);

// Log-likelihood and its derivatives with respect to the free parameters of
// `family` (lambda is dropped when it is fixed).
struct Evaluation {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd hessian;
    Eigen::MatrixXd individual_scores;  // N x p, filled on request
};

// order: 0 = value, 1 = + score, 2 = + Hessian.
Evaluation evaluate(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links,
                    Family family, int order, bool keep_individual = false);

double loglik(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links);
double loglik_individual(const IndividualRecord& rec, const Theta& th, const LinkSpec& links);
Eigen::VectorXd score(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links,
                      Family family = Family::full());
Eigen::MatrixXd hessian(const LongitudinalDataset& ds, const Theta& th, const LinkSpec& links,
                        Family family = Family::full());
std::vector<Eigen::VectorXd> per_individual_scores(const LongitudinalDataset& ds, const Theta& th,
                                                   const LinkSpec& links,
                                                   Family family = Family::full());

// Number of Hessian evaluations since start-up (or the last reset).
std::uint64_t hessian_eval_count();
void reset_hessian_eval_count();

// Conditional law of v_i given the record: GIG(lambda - n_i/2, B_i, A_i).
dist::GigParams posterior_gig(const IndividualRecord& rec, const Theta& th, const LinkSpec& links);
double posterior_mean(const IndividualRecord& rec, const Theta& th, const LinkSpec& links);

double predict_fitted(const IndividualRecord& rec, const Theta& th, const LinkSpec& links,
                      const Eigen::VectorXd& new_x, const Eigen::VectorXd& new_z);

}  // namespace ghme

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ezbsde/errors.hpp"

namespace ezbsde {

/// Least-squares projection onto polynomials of total degree <= `degree` in the
/// standardized feature columns. Columns with (numerically) zero spread are
/// dropped, so a deterministic state reduces the basis to the constant.
class Regressor {
public:
    Regressor(const Eigen::MatrixXd& features, int degree) {
        if (degree < 0) throw InvalidParameter("regression degree must be nonnegative");
        const Eigen::Index m = features.rows();
        if (m < 1) throw InvalidParameter("regression needs at least one sample");

        std::vector<Eigen::VectorXd> cols;
        for (Eigen::Index j = 0; j < features.cols(); ++j) {
            const Eigen::VectorXd x = features.col(j);
            const double mean = x.mean();
            const double sd = std::sqrt((x.array() - mean).square().mean());
            if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
            cols.emplace_back((x.array() - mean) / sd);
        }

        std::vector<std::vector<int>> exps;
        std::vector<int> cur(cols.size(), 0);
        enumerate(exps, cur, 0, degree);
        if (static_cast<Eigen::Index>(exps.size()) > m)
            throw NumericalError("regression rank deficiency: more basis functions than samples");

        design_.resize(m, static_cast<Eigen::Index>(exps.size()));
        for (std::size_t b = 0; b < exps.size(); ++b) {
            Eigen::ArrayXd v = Eigen::ArrayXd::Ones(m);
            for (std::size_t j = 0; j < cols.size(); ++j)
                for (int e = 0; e < exps[b][j]; ++e) v *= cols[j].array();
            design_.col(static_cast<Eigen::Index>(b)) = v.matrix();
        }
        qr_.compute(design_);
        if (qr_.rank() < design_.cols())
            throw NumericalError("regression rank deficiency: basis has rank " +
                                 std::to_string(qr_.rank()) + " < " + std::to_string(design_.cols()));
    }

    Eigen::Index basis_size() const { return design_.cols(); }

    /// Fitted values (projection of each target column on the basis).
    Eigen::MatrixXd fit(const Eigen::MatrixXd& targets) const {
        return design_ * qr_.solve(targets);
    }

private:
    static void enumerate(std::vector<std::vector<int>>& out, std::vector<int>& cur, std::size_t j,
                          int left) {
        if (j == cur.size()) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= left; ++e) {
            cur[j] = e;
            enumerate(out, cur, j + 1, left - e);
        }
        cur[j] = 0;
    }

    Eigen::MatrixXd design_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

}  // namespace ezbsde

#pragma once

// Central finite differences against autograd, per parameter tensor. The
// default step keeps double rounding noise well below the truncation error.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace gradcheck {

struct GroupError {
    std::string name;
    double relative = 0.0;
    double analytic_norm = 0.0;
};

/// loss() must be deterministic. Up to `per_tensor` evenly spaced elements
/// of every parameter are perturbed by +-h. The error of a group is
/// ||fd - analytic|| / max(||fd||, ||analytic||), or 0 when both norms are
/// below `floor`.
inline std::vector<GroupError> check(torch::nn::Module& module, const std::function<torch::Tensor()>& loss,
                                     int per_tensor = 12, double h = 1e-4, double floor = 1e-9) {
    for (auto& p : module.parameters()) p.mutable_grad() = torch::Tensor();
    loss().backward();
    std::vector<GroupError> out;
    for (auto& item : module.named_parameters()) {
        auto& p = item.value();
        auto flat = p.data().view(-1);
        auto grad = p.grad().defined() ? p.grad().view(-1) : torch::zeros_like(flat);
        const int64_t n = flat.numel();
        const int64_t count = std::min<int64_t>(n, per_tensor);
        double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
        for (int64_t s = 0; s < count; ++s) {
            const int64_t i = count == n ? s : (s * n) / count;
            const double orig = flat[i].item<double>();
            double fp, fm;
            {
                torch::NoGradGuard ng;
                flat[i] = orig + h;
                fp = loss().item<double>();
                flat[i] = orig - h;
                fm = loss().item<double>();
                flat[i] = orig;
            }
            const double fd = (fp - fm) / (2 * h);
            const double an = grad[i].item<double>();
            diff2 += (fd - an) * (fd - an);
            fd2 += fd * fd;
            an2 += an * an;
        }
        const double denom = std::max(std::sqrt(fd2), std::sqrt(an2));
        out.push_back({item.key(), denom < floor ? 0.0 : std::sqrt(diff2) / denom, std::sqrt(an2)});
    }
    return out;
}

} // namespace gradcheck

#include "cpl/metrics.hpp"

#include "cpl/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace F = torch::nn::functional;

namespace cpl {

namespace {

torch::Tensor as_sequences(const torch::Tensor& x) {
    if (x.dim() == 4) return x.unsqueeze(0);
    if (x.dim() == 5) return x;
    throw ShapeError("expected [L, C, H, W] or [B, L, C, H, W]");
}

void check_same(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw ShapeError("metric inputs differ in shape");
}

torch::Tensor gaussian_window(const SsimOptions& o) {
    auto x = torch::arange(o.window, torch::kDouble) - (o.window - 1) / 2.0;
    auto g = torch::exp(-(x * x) / (2.0 * o.sigma * o.sigma));
    return g / g.sum();
}

// [N, 1, H, W] -> separable valid-mode Gaussian filtering.
torch::Tensor blur(const torch::Tensor& x, const torch::Tensor& g) {
    const auto w = g.size(0);
    auto y = F::conv2d(x, g.view({1, 1, 1, w}));
    return F::conv2d(y, g.view({1, 1, w, 1}));
}

} // namespace

double psnr_frame(const torch::Tensor& pred, const torch::Tensor& target, double data_range, double cap) {
    check_same(pred, target);
    const double mse = (pred.to(torch::kDouble) - target.to(torch::kDouble)).pow(2).mean().item<double>();
    if (mse <= 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(data_range * data_range / mse));
}

double psnr(const torch::Tensor& pred, const torch::Tensor& target, double data_range, double cap) {
    check_same(pred, target);
    auto p = as_sequences(pred).to(torch::kDouble);
    auto t = as_sequences(target).to(torch::kDouble);
    auto mse = (p - t).pow(2).mean({2, 3, 4}); // [B, L]
    auto db = (10.0 * torch::log10(data_range * data_range / mse)).clamp_max(cap);
    db = torch::where(mse > 0, db, torch::full_like(db, cap));
    return db.mean(1).mean().item<double>();
}

namespace {

// SSIM map mean per leading index of x, y: [N, C, H, W] -> [N].
torch::Tensor ssim_per_frame(const torch::Tensor& pred, const torch::Tensor& target, const SsimOptions& o) {
    if (pred.size(-2) < o.window || pred.size(-1) < o.window) throw ShapeError("frame smaller than the SSIM window");
    const double c1 = std::pow(o.k1 * o.data_range, 2);
    const double c2 = std::pow(o.k2 * o.data_range, 2);
    const auto n = pred.size(0);
    const auto c = pred.size(1);
    auto g = gaussian_window(o);
    auto x = pred.to(torch::kDouble).reshape({n * c, 1, pred.size(2), pred.size(3)});
    auto y = target.to(torch::kDouble).reshape({n * c, 1, pred.size(2), pred.size(3)});
    auto mx = blur(x, g);
    auto my = blur(y, g);
    auto sxx = blur(x * x, g) - mx * mx;
    auto syy = blur(y * y, g) - my * my;
    auto sxy = blur(x * y, g) - mx * my;
    auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.reshape({n, -1}).mean(1);
}

} // namespace

double ssim_frame(const torch::Tensor& pred, const torch::Tensor& target, const SsimOptions& o) {
    check_same(pred, target);
    if (pred.dim() != 3) throw ShapeError("ssim_frame expects [C, H, W]");
    return ssim_per_frame(pred.unsqueeze(0), target.unsqueeze(0), o).item<double>();
}

double ssim(const torch::Tensor& pred, const torch::Tensor& target, const SsimOptions& options) {
    check_same(pred, target);
    auto p = as_sequences(pred);
    auto t = as_sequences(target);
    const auto B = p.size(0);
    const auto L = p.size(1);
    auto flat = [&](const torch::Tensor& v) { return v.reshape({B * L, v.size(2), v.size(3), v.size(4)}); };
    auto per_frame = ssim_per_frame(flat(p), flat(t), options).view({B, L});
    return per_frame.mean(1).mean().item<double>();
}

// -- EvalMatrix ------------------------------------------------------------------

void EvalMatrix::append_row(std::vector<EvalEntry> row) {
    if (static_cast<int>(row.size()) != num_tasks)
        throw ShapeError("evaluation row must hold one entry per task");
    rows.push_back(std::move(row));
}

const EvalEntry& EvalMatrix::at(int period, int task) const {
    if (period < 1 || period > static_cast<int>(rows.size()) || task < 1 || task > num_tasks)
        throw std::out_of_range("EvalMatrix index out of range");
    return rows[static_cast<size_t>(period - 1)][static_cast<size_t>(task - 1)];
}

double EvalMatrix::mean_psnr(int period) const {
    double s = 0.0;
    for (int i = 1; i <= num_tasks; ++i) s += at(period, i).psnr;
    return s / num_tasks;
}

double EvalMatrix::mean_ssim(int period) const {
    double s = 0.0;
    for (int i = 1; i <= num_tasks; ++i) s += at(period, i).ssim;
    return s / num_tasks;
}

std::string EvalMatrix::to_csv() const {
    std::string out = "period,task,psnr,ssim,inference_accuracy\n";
    char line[160];
    for (size_t j = 0; j < rows.size(); ++j) {
        for (size_t i = 0; i < rows[j].size(); ++i) {
            const auto& e = rows[j][i];
            std::snprintf(line, sizeof line, "%zu,%zu,%.6f,%.6f,%.6f\n", j + 1, i + 1, e.psnr, e.ssim,
                          e.inference_accuracy);
            out += line;
        }
    }
    return out;
}

void EvalMatrix::write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << to_csv();
}

EvalMatrix EvalMatrix::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line); // header
    std::vector<std::tuple<int, int, EvalEntry>> cells;
    int periods = 0, tasks = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int j = 0, i = 0;
        EvalEntry e;
        if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &j, &i, &e.psnr, &e.ssim, &e.inference_accuracy) != 5)
            throw std::runtime_error("malformed evaluation CSV line: " + line);
        cells.emplace_back(j, i, e);
        periods = std::max(periods, j);
        tasks = std::max(tasks, i);
    }
    EvalMatrix m;
    m.num_tasks = tasks;
    m.rows.assign(static_cast<size_t>(periods), std::vector<EvalEntry>(static_cast<size_t>(tasks)));
    for (const auto& [j, i, e] : cells) m.rows[static_cast<size_t>(j - 1)][static_cast<size_t>(i - 1)] = e;
    return m;
}

double forgetting_gap(const EvalMatrix& matrix, int task) {
    const int last = static_cast<int>(matrix.rows.size());
    if (last == 1 && task >= 1 && task <= matrix.num_tasks) return 0.0; // a single period cannot forget
    if (task < 1 || task > last) throw std::out_of_range("forgetting_gap: matrix has fewer periods than the task index");
    return matrix.at(task, task).psnr - matrix.at(last, task).psnr;
}

} // namespace cpl

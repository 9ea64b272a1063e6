#include "nirsfreq/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

#include "nirsfreq/common.hpp"

namespace nirsfreq {

namespace {

// One cached plan per (length, sign). FFTW_UNALIGNED lets us run the plan on
// ordinary std::vector storage via the new-array execute interface.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(size_t n, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_pair(n, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    // Plan creation needs scratch buffers; contents are not preserved with
    // FFTW_ESTIMATE but we use throwaway storage anyway.
    fftw_complex* scratch = fftw_alloc_complex(n);
    fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), scratch, scratch, sign,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(scratch);
    if (!plan) throw NumericError("fftw plan creation failed for length " + std::to_string(n));
    plans_[key] = plan;
    return plan;
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<std::pair<size_t, int>, fftw_plan> plans_;
};

std::vector<std::complex<double>> run(const std::vector<std::complex<double>>& in, int sign) {
  if (in.empty()) throw NumericError("fft input is empty");
  std::vector<std::complex<double>> out(in.size());
  fftw_plan plan = PlanCache::instance().get(in.size(), sign);
  // std::complex<double> is layout-compatible with fftw_complex (double[2]).
  auto* src = reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data()));
  auto* dst = reinterpret_cast<fftw_complex*>(out.data());
  fftw_execute_dft(plan, src, dst);
  return out;
}

}  // namespace

std::vector<std::complex<double>> fft_forward(const std::vector<std::complex<double>>& in) {
  return run(in, FFTW_FORWARD);
}

std::vector<std::complex<double>> fft_inverse(const std::vector<std::complex<double>>& in) {
  return run(in, FFTW_BACKWARD);
}

std::vector<std::complex<double>> fft_forward_real(const std::vector<double>& in) {
  std::vector<std::complex<double>> cx(in.size());
  for (size_t i = 0; i < in.size(); ++i) cx[i] = std::complex<double>(in[i], 0.0);
  return fft_forward(cx);
}

}  // namespace nirsfreq

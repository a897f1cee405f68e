#pragma once

#include <fftw3.h>

#include <memory>
#include <mutex>

namespace amt::detail {

// Real-to-complex FFT of a fixed size. FFTW planning is not thread-safe, so
// plan creation and destruction are serialized; execution is not.
class RealFft {
 public:
  explicit RealFft(int size)
      : size_(size),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * static_cast<std::size_t>(size)))),
        out_(static_cast<fftw_complex*>(
            fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(size / 2 + 1)))) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(size, in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return size_; }
  int bins() const { return size_ / 2 + 1; }
  double* input() { return in_.get(); }
  const fftw_complex* output() const { return out_.get(); }
  void execute() { fftw_execute(plan_); }

 private:
  struct Free {
    void operator()(void* p) const { fftw_free(p); }
  };
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  int size_;
  std::unique_ptr<double, Free> in_;
  std::unique_ptr<fftw_complex, Free> out_;
  fftw_plan plan_;
};

}  // namespace amt::detail

#pragma once

#include <torch/torch.h>

namespace x2ct {

// "working" runs in float32; "high" (float64) backs gradient and
// finite-difference verification.
enum class Precision { working, high };

// Reads X2CT_PRECISION ({working, high}); unset means working.
Precision precision_from_env();

// Sets the torch default dtype so freshly built modules and tensors follow it.
void set_precision(Precision p);
Precision current_precision();

inline torch::Dtype working_dtype() {
    return current_precision() == Precision::high ? torch::kFloat64 : torch::kFloat32;
}

inline torch::TensorOptions tensor_options() { return torch::TensorOptions().dtype(working_dtype()); }

// RAII override used by tests that need a block in a specific precision.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : saved_(current_precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(saved_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

}  // namespace x2ct

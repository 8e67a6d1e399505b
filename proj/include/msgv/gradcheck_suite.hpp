#pragma once

#include <string>
#include <vector>

namespace msgv {

enum class GradScope { Ops, Layer, Full };

GradScope grad_scope_from_name(const std::string& name);

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  bool all_pass = true;
  std::size_t worst = 0;  // index of the largest relative error
};

// Finite-difference verification of the backward rules (64-bit central
// differences, eps 1e-4, tolerance 1e-4 unless a case says otherwise).
//   Ops:   every tensor primitive on small random inputs.
//   Layer: modulation/attention building blocks and their parameters.
//   Full:  end-to-end generator+discriminator losses on a 16-pixel,
//          4-style model, sweeping a subsample of every parameter tensor.
// `inject_sign_flip` appends a negative control: a custom op whose backward
// rule deliberately flips sign, which must FAIL and be named in the report.
GradCheckReport run_gradcheck(GradScope scope, bool inject_sign_flip = false);

}  // namespace msgv

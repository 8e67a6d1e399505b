#include "doctest.h"
#include "msgv/errors.hpp"
#include "msgv/gradcheck_suite.hpp"

using namespace msgv;

TEST_CASE("gradcheck suite: ops and layer scopes pass at 1e-4") {
  for (auto scope : {GradScope::Ops, GradScope::Layer}) {
    GradCheckReport r = run_gradcheck(scope);
    CHECK(r.all_pass);
    CHECK(!r.cases.empty());
    for (const auto& c : r.cases) CHECK(c.max_rel_err <= c.tolerance);
  }
}

TEST_CASE("gradcheck suite: full scope covers every parameter tensor of the 16px model") {
  GradCheckReport r = run_gradcheck(GradScope::Full);
  CHECK(r.all_pass);
  // one case per generator parameter plus discriminator parameters and the
  // two input-side checks
  CHECK(r.cases.size() > 20);
  bool saw_gen = false, saw_disc = false;
  for (const auto& c : r.cases) {
    if (c.name.find("param_g.") == 0) saw_gen = true;
    if (c.name.find("param_d.") == 0) saw_disc = true;
  }
  CHECK(saw_gen);
  CHECK(saw_disc);
}

TEST_CASE("gradcheck suite: injected sign flip fails and is named as the worst offender") {
  GradCheckReport r = run_gradcheck(GradScope::Ops, /*inject_sign_flip=*/true);
  CHECK(!r.all_pass);
  CHECK(r.cases[r.worst].name == "sign_flip_fixture");
  CHECK(r.cases[r.worst].max_rel_err > 1.0);
}

TEST_CASE("gradcheck scope names parse; unknown scope is a config error") {
  CHECK(grad_scope_from_name("ops") == GradScope::Ops);
  CHECK(grad_scope_from_name("layer") == GradScope::Layer);
  CHECK(grad_scope_from_name("full") == GradScope::Full);
  CHECK_THROWS_AS(grad_scope_from_name("everything"), ConfigError);
}

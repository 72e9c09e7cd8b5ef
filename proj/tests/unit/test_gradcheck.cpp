#include <doctest.h>

#include "gradcheck_suite.hpp"

TEST_CASE("gradient correctness: every primitive against central differences") {
    const auto results = oracle::run_gradient_suite(2, 424242);
    REQUIRE(!results.empty());
    for (const auto& r : results) {
        INFO(r.op);
        CHECK(r.max_err <= 1e-4);
    }
}

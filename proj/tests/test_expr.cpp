#include <doctest.h>

#include "perfhom/errors.hpp"
#include "perfhom/expr.hpp"

#include <cmath>

using namespace perfhom;

TEST_SUITE("expr") {
    TEST_CASE("arithmetic and precedence") {
        CHECK(Expr::parse("2+3*4^2").eval(0, 0) == doctest::Approx(50.0));
        CHECK(Expr::parse("(2+3)*4").eval(0, 0) == doctest::Approx(20.0));
        CHECK(Expr::parse("-y1 + 2*y2").eval(1.5, 2.0) == doctest::Approx(2.5));
        CHECK(Expr::parse("1/4").eval(0, 0) == doctest::Approx(0.25));
        CHECK(Expr::parse("2^-1").eval(0, 0) == doctest::Approx(0.5));
    }

    TEST_CASE("functions and constants") {
        const Expr e = Expr::parse("1 + 0.5*sin(2*pi*y1)");
        for (double y : {0.0, 0.13, 0.77})
            CHECK(e.eval(y, 0) ==
                  doctest::Approx(1 + 0.5 * std::sin(2 * 3.14159265358979323846 * y)));
        CHECK(Expr::parse("exp(0)").eval(0, 0) == doctest::Approx(1.0));
        CHECK(Expr::parse("sqrt(abs(0-4))").eval(0, 0) == doctest::Approx(2.0));
        CHECK(Expr::parse("cos(pi)").eval(0, 0) == doctest::Approx(-1.0));
    }

    TEST_CASE("parse failures") {
        CHECK_THROWS_AS(Expr::parse("2 +"), ConfigError);
        CHECK_THROWS_AS(Expr::parse("sin 3"), ConfigError);
        CHECK_THROWS_AS(Expr::parse("y3"), ConfigError);
        CHECK_THROWS_AS(Expr::parse("(1"), ConfigError);
        CHECK_THROWS_AS(Expr::parse("1 2"), ConfigError);
    }
}

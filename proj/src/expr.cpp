#include "perfhom/expr.hpp"

#include "perfhom/errors.hpp"

#include <cctype>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace perfhom {

struct Expr::Node {
    enum class Kind { Const, Var1, Var2, Add, Sub, Mul, Div, Pow, Neg, Fun } kind;
    double value = 0.0;
    double (*fun)(double) = nullptr;
    std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

class Parser {
public:
    explicit Parser(const std::string& s) : s_(s) {}

    NodePtr run() {
        NodePtr e = expr();
        skip_ws();
        if (pos_ != s_.size())
            fail("unexpected trailing input");
        return e;
    }

private:
    const std::string& s_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("expression parse error at position " + std::to_string(pos_) +
                          " in '" + s_ + "': " + what);
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }

    static NodePtr make(Expr::Node n) { return std::make_shared<Expr::Node>(std::move(n)); }

    NodePtr expr() {
        NodePtr lhs = term();
        for (;;) {
            if (eat('+'))
                lhs = make({Expr::Node::Kind::Add, 0, nullptr, lhs, term()});
            else if (eat('-'))
                lhs = make({Expr::Node::Kind::Sub, 0, nullptr, lhs, term()});
            else
                return lhs;
        }
    }

    NodePtr term() {
        NodePtr lhs = factor();
        for (;;) {
            if (eat('*'))
                lhs = make({Expr::Node::Kind::Mul, 0, nullptr, lhs, factor()});
            else if (eat('/'))
                lhs = make({Expr::Node::Kind::Div, 0, nullptr, lhs, factor()});
            else
                return lhs;
        }
    }

    NodePtr factor() {
        if (eat('+')) return factor();
        if (eat('-')) return make({Expr::Node::Kind::Neg, 0, nullptr, factor(), nullptr});
        NodePtr base = primary();
        if (eat('^'))
            return make({Expr::Node::Kind::Pow, 0, nullptr, base, factor()});
        return base;
    }

    NodePtr primary() {
        skip_ws();
        const char c = peek();
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s_.substr(pos_), &used);
            } catch (const std::exception&) {
                fail("bad number");
            }
            pos_ += used;
            return make({Expr::Node::Kind::Const, v, nullptr, nullptr, nullptr});
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::string id;
            while (pos_ < s_.size() &&
                   (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
                id += s_[pos_++];
            if (id == "y1") return make({Expr::Node::Kind::Var1, 0, nullptr, nullptr, nullptr});
            if (id == "y2") return make({Expr::Node::Kind::Var2, 0, nullptr, nullptr, nullptr});
            if (id == "pi")
                return make({Expr::Node::Kind::Const, 3.14159265358979323846, nullptr, nullptr,
                             nullptr});
            double (*fn)(double) = nullptr;
            if (id == "sin") fn = std::sin;
            else if (id == "cos") fn = std::cos;
            else if (id == "exp") fn = std::exp;
            else if (id == "sqrt") fn = std::sqrt;
            else if (id == "abs") fn = std::fabs;
            else fail("unknown identifier '" + id + "'");
            if (!eat('(')) fail("expected '(' after function name");
            NodePtr arg = expr();
            if (!eat(')')) fail("expected ')'");
            return make({Expr::Node::Kind::Fun, 0, fn, arg, nullptr});
        }
        if (eat('(')) {
            NodePtr e = expr();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        fail("expected number, variable, or '('");
    }
};

double eval_node(const Expr::Node& n, double y1, double y2) {
    using K = Expr::Node::Kind;
    switch (n.kind) {
        case K::Const: return n.value;
        case K::Var1: return y1;
        case K::Var2: return y2;
        case K::Add: return eval_node(*n.a, y1, y2) + eval_node(*n.b, y1, y2);
        case K::Sub: return eval_node(*n.a, y1, y2) - eval_node(*n.b, y1, y2);
        case K::Mul: return eval_node(*n.a, y1, y2) * eval_node(*n.b, y1, y2);
        case K::Div: return eval_node(*n.a, y1, y2) / eval_node(*n.b, y1, y2);
        case K::Pow: return std::pow(eval_node(*n.a, y1, y2), eval_node(*n.b, y1, y2));
        case K::Neg: return -eval_node(*n.a, y1, y2);
        case K::Fun: return n.fun(eval_node(*n.a, y1, y2));
    }
    return 0.0;
}

} // namespace

Expr Expr::parse(const std::string& text) {
    Parser p(text);
    return Expr(p.run(), text);
}

double Expr::eval(double y1, double y2) const { return eval_node(*root_, y1, y2); }

Expr::Expr(std::shared_ptr<const Node> root, std::string text)
    : root_(std::move(root)), text_(std::move(text)) {}

Expr::Expr(const Expr&) = default;
Expr& Expr::operator=(const Expr&) = default;
Expr::Expr(Expr&&) noexcept = default;
Expr& Expr::operator=(Expr&&) noexcept = default;
Expr::~Expr() = default;

} // namespace perfhom

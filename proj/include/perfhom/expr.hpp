#pragma once

#include <memory>
#include <string>

namespace perfhom {

// Parsed arithmetic expression in the variables y1, y2. Grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := ('+'|'-') factor | primary ('^' factor)?
//   primary:= number | 'y1' | 'y2' | 'pi' | func '(' expr ')' | '(' expr ')'
// with func in {sin, cos, exp, sqrt, abs}. Throws ConfigError on parse failure.
class Expr {
public:
    static Expr parse(const std::string& text);

    double eval(double y1, double y2) const;
    const std::string& text() const { return text_; }

    Expr(const Expr&);
    Expr& operator=(const Expr&);
    Expr(Expr&&) noexcept;
    Expr& operator=(Expr&&) noexcept;
    ~Expr();

    struct Node; // exposed for the parser implementation

private:
    Expr(std::shared_ptr<const Node> root, std::string text);
    std::shared_ptr<const Node> root_;
    std::string text_;
};

} // namespace perfhom

//! Canonical source rendering.
//!
//! Style is fixed: four-space indentation, one statement per line, no blank
//! lines, a single space after commas, spaces around binary operators and no
//! spaces around `=` in keyword arguments. Tuples are always parenthesized
//! except as assignment/loop targets and subscripts.

use std::ops::Range;

use super::ast::*;

/// A call expression as it appears in rendered text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    /// Dotted callee (`nn.Linear`), when the callee is a name/attribute chain.
    pub callee: Option<String>,
    pub callee_span: Range<usize>,
    /// Keyword argument names with the span of the name itself.
    pub keywords: Vec<(String, Range<usize>)>,
    pub has_star: bool,
    /// Index into [`Rendered::statements`] of the enclosing top-level statement.
    pub statement: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Rendered {
    pub text: String,
    /// Calls ordered by callee start offset.
    pub calls: Vec<CallSite>,
    /// Byte range of each top-level statement (including trailing newline).
    pub statements: Vec<Range<usize>>,
}

pub fn unparse(module: &Module) -> String {
    render(module).text
}

pub fn render(module: &Module) -> Rendered {
    let mut w = Writer::default();
    for stmt in &module.body {
        let start = w.out.len();
        w.stmt(stmt, 0);
        w.statements.push(start..w.out.len());
    }
    w.calls.sort_by_key(|c| c.callee_span.start);
    Rendered {
        text: w.out,
        calls: w.calls,
        statements: w.statements,
    }
}

pub fn unparse_expr(expr: &Expr) -> String {
    let mut w = Writer::default();
    w.expr(expr, prec::TUPLE);
    w.out
}

mod prec {
    pub const TUPLE: u8 = 0;
    pub const NAMED: u8 = 1;
    pub const LAMBDA: u8 = 2;
    pub const IFEXP: u8 = 3;
    pub const OR: u8 = 4;
    pub const AND: u8 = 5;
    pub const NOT: u8 = 6;
    pub const CMP: u8 = 7;
    pub const BOR: u8 = 8;
    pub const BXOR: u8 = 9;
    pub const BAND: u8 = 10;
    pub const SHIFT: u8 = 11;
    pub const ARITH: u8 = 12;
    pub const TERM: u8 = 13;
    pub const FACTOR: u8 = 14;
    pub const POWER: u8 = 15;
    pub const AWAIT: u8 = 16;
    pub const ATOM: u8 = 17;
}

fn binop_prec(op: BinOp) -> u8 {
    match op {
        BinOp::BitOr => prec::BOR,
        BinOp::BitXor => prec::BXOR,
        BinOp::BitAnd => prec::BAND,
        BinOp::LShift | BinOp::RShift => prec::SHIFT,
        BinOp::Add | BinOp::Sub => prec::ARITH,
        BinOp::Mul | BinOp::MatMul | BinOp::Div | BinOp::FloorDiv | BinOp::Mod => prec::TERM,
        BinOp::Pow => prec::POWER,
    }
}

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::NamedExpr { .. } => prec::NAMED,
        Expr::Lambda { .. } => prec::LAMBDA,
        Expr::IfExp { .. } => prec::IFEXP,
        Expr::BoolOp { op: BoolOp::Or, .. } => prec::OR,
        Expr::BoolOp {
            op: BoolOp::And, ..
        } => prec::AND,
        Expr::UnaryOp {
            op: UnaryOp::Not, ..
        } => prec::NOT,
        Expr::Compare { .. } => prec::CMP,
        Expr::BinOp { op, .. } => binop_prec(*op),
        Expr::UnaryOp { .. } => prec::FACTOR,
        Expr::Await(_) => prec::AWAIT,
        // Yield only appears bare at statement level; elsewhere it is wrapped.
        Expr::Yield(_) | Expr::YieldFrom(_) => prec::TUPLE,
        Expr::Starred(_) => prec::BOR,
        _ => prec::ATOM,
    }
}

#[derive(Default)]
struct Writer {
    out: String,
    calls: Vec<CallSite>,
    statements: Vec<Range<usize>>,
}

impl Writer {
    fn w(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn line_start(&mut self, indent: usize) {
        for _ in 0..indent {
            self.out.push_str("    ");
        }
    }

    fn body(&mut self, stmts: &[Stmt], indent: usize) {
        self.w(":\n");
        if stmts.is_empty() {
            self.line_start(indent + 1);
            self.w("pass\n");
        }
        for s in stmts {
            self.stmt(s, indent + 1);
        }
    }

    fn stmt(&mut self, stmt: &Stmt, indent: usize) {
        match stmt {
            Stmt::ClassDef {
                name,
                bases,
                decorators,
                body,
            } => {
                self.decorators(decorators, indent);
                self.line_start(indent);
                self.w("class ");
                self.w(name);
                if !bases.is_empty() {
                    self.w("(");
                    self.args(bases);
                    self.w(")");
                }
                self.body(body, indent);
            }
            Stmt::FunctionDef {
                name,
                params,
                returns,
                decorators,
                body,
                is_async,
            } => {
                self.decorators(decorators, indent);
                self.line_start(indent);
                if *is_async {
                    self.w("async ");
                }
                self.w("def ");
                self.w(name);
                self.w("(");
                self.params(params, true);
                self.w(")");
                if let Some(r) = returns {
                    self.w(" -> ");
                    self.expr(r, prec::IFEXP);
                }
                self.body(body, indent);
            }
            Stmt::If { test, body, orelse } => {
                self.line_start(indent);
                self.w("if ");
                self.if_chain(test, body, orelse, indent);
            }
            Stmt::While { test, body, orelse } => {
                self.line_start(indent);
                self.w("while ");
                self.expr(test, prec::NAMED);
                self.body(body, indent);
                self.else_block(orelse, indent);
            }
            Stmt::For {
                target,
                iter,
                body,
                orelse,
                is_async,
            } => {
                self.line_start(indent);
                if *is_async {
                    self.w("async ");
                }
                self.w("for ");
                self.target(target);
                self.w(" in ");
                self.expr_list(iter);
                self.body(body, indent);
                self.else_block(orelse, indent);
            }
            Stmt::With {
                items,
                body,
                is_async,
            } => {
                self.line_start(indent);
                if *is_async {
                    self.w("async ");
                }
                self.w("with ");
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        self.w(", ");
                    }
                    self.expr(&item.context, prec::IFEXP);
                    if let Some(t) = &item.target {
                        self.w(" as ");
                        self.expr(t, prec::BOR);
                    }
                }
                self.body(body, indent);
            }
            Stmt::Try {
                body,
                handlers,
                orelse,
                finalbody,
            } => {
                self.line_start(indent);
                self.w("try");
                self.body(body, indent);
                for h in handlers {
                    self.line_start(indent);
                    self.w("except");
                    if let Some(t) = &h.typ {
                        self.w(" ");
                        self.expr(t, prec::IFEXP);
                        if let Some(n) = &h.name {
                            self.w(" as ");
                            self.w(n);
                        }
                    }
                    self.body(&h.body, indent);
                }
                self.else_block(orelse, indent);
                if !finalbody.is_empty() {
                    self.line_start(indent);
                    self.w("finally");
                    self.body(finalbody, indent);
                }
            }
            simple => {
                self.line_start(indent);
                self.simple(simple);
                self.w("\n");
            }
        }
    }

    fn if_chain(&mut self, test: &Expr, body: &[Stmt], orelse: &[Stmt], indent: usize) {
        self.expr(test, prec::NAMED);
        self.body(body, indent);
        if let [Stmt::If { test, body, orelse }] = orelse {
            self.line_start(indent);
            self.w("elif ");
            self.if_chain(test, body, orelse, indent);
        } else {
            self.else_block(orelse, indent);
        }
    }

    fn else_block(&mut self, orelse: &[Stmt], indent: usize) {
        if !orelse.is_empty() {
            self.line_start(indent);
            self.w("else");
            self.body(orelse, indent);
        }
    }

    fn decorators(&mut self, decorators: &[Expr], indent: usize) {
        for d in decorators {
            self.line_start(indent);
            self.w("@");
            self.expr(d, prec::NAMED);
            self.w("\n");
        }
    }

    fn simple(&mut self, stmt: &Stmt) {
        match stmt {
            Stmt::Expr(e) => self.expr_list(e),
            Stmt::Assign { targets, value } => {
                for t in targets {
                    self.target(t);
                    self.w(" = ");
                }
                self.expr_list(value);
            }
            Stmt::AugAssign { target, op, value } => {
                self.target(target);
                self.w(" ");
                self.w(op.symbol());
                self.w("= ");
                self.expr_list(value);
            }
            Stmt::AnnAssign {
                target,
                annotation,
                value,
            } => {
                self.target(target);
                self.w(": ");
                self.expr(annotation, prec::IFEXP);
                if let Some(v) = value {
                    self.w(" = ");
                    self.expr_list(v);
                }
            }
            Stmt::Import(names) => {
                self.w("import ");
                self.aliases(names);
            }
            Stmt::ImportFrom {
                module,
                level,
                names,
            } => {
                self.w("from ");
                for _ in 0..*level {
                    self.w(".");
                }
                if let Some(m) = module {
                    self.w(m);
                }
                self.w(" import ");
                self.aliases(names);
            }
            Stmt::Return(v) => {
                self.w("return");
                if let Some(v) = v {
                    self.w(" ");
                    self.expr(v, prec::TUPLE);
                }
            }
            Stmt::Pass => self.w("pass"),
            Stmt::Break => self.w("break"),
            Stmt::Continue => self.w("continue"),
            Stmt::Raise { exc, cause } => {
                self.w("raise");
                if let Some(e) = exc {
                    self.w(" ");
                    self.expr(e, prec::IFEXP);
                }
                if let Some(c) = cause {
                    self.w(" from ");
                    self.expr(c, prec::IFEXP);
                }
            }
            Stmt::Del(targets) => {
                self.w("del ");
                self.comma_sep(targets, prec::BOR);
            }
            Stmt::Global(names) | Stmt::Nonlocal(names) => {
                self.w(if matches!(stmt, Stmt::Global(_)) {
                    "global "
                } else {
                    "nonlocal "
                });
                self.w(&names.join(", "));
            }
            Stmt::Assert { test, msg } => {
                self.w("assert ");
                self.expr(test, prec::IFEXP);
                if let Some(m) = msg {
                    self.w(", ");
                    self.expr(m, prec::IFEXP);
                }
            }
            _ => unreachable!("compound statement routed to simple()"),
        }
    }

    fn aliases(&mut self, names: &[Alias]) {
        for (i, a) in names.iter().enumerate() {
            if i > 0 {
                self.w(", ");
            }
            self.w(&a.name);
            if let Some(asname) = &a.asname {
                self.w(" as ");
                self.w(asname);
            }
        }
    }

    /// Statement-level expression: bare tuples and yields are allowed.
    fn expr_list(&mut self, e: &Expr) {
        match e {
            Expr::Yield(_) | Expr::YieldFrom(_) => self.yield_expr(e),
            _ => self.expr(e, prec::TUPLE),
        }
    }

    fn target(&mut self, e: &Expr) {
        match e {
            Expr::Tuple(items) if items.len() > 1 => self.comma_sep(items, prec::BOR),
            _ => self.expr(e, prec::BOR),
        }
    }

    fn comma_sep(&mut self, items: &[Expr], min: u8) {
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                self.w(", ");
            }
            self.expr(item, min);
        }
    }

    fn yield_expr(&mut self, e: &Expr) {
        match e {
            Expr::Yield(None) => self.w("yield"),
            Expr::Yield(Some(v)) => {
                self.w("yield ");
                self.expr(v, prec::TUPLE);
            }
            Expr::YieldFrom(v) => {
                self.w("yield from ");
                self.expr(v, prec::IFEXP);
            }
            _ => unreachable!(),
        }
    }

    fn params(&mut self, params: &[Param], annotations: bool) {
        for (i, p) in params.iter().enumerate() {
            if i > 0 {
                self.w(", ");
            }
            match p {
                Param::Plain {
                    name,
                    annotation,
                    default,
                } => {
                    self.w(name);
                    let annotated = annotations && annotation.is_some();
                    if let (true, Some(a)) = (annotations, annotation) {
                        self.w(": ");
                        self.expr(a, prec::IFEXP);
                    }
                    if let Some(d) = default {
                        self.w(if annotated { " = " } else { "=" });
                        self.expr(d, prec::LAMBDA);
                    }
                }
                Param::VarArgs { name, annotation } => {
                    self.w("*");
                    if let Some(n) = name {
                        self.w(n);
                        if let (true, Some(a)) = (annotations, annotation) {
                            self.w(": ");
                            self.expr(a, prec::IFEXP);
                        }
                    }
                }
                Param::VarKw { name, annotation } => {
                    self.w("**");
                    self.w(name);
                    if let (true, Some(a)) = (annotations, annotation) {
                        self.w(": ");
                        self.expr(a, prec::IFEXP);
                    }
                }
                Param::PosOnly => self.w("/"),
            }
        }
    }

    fn args(&mut self, args: &[Arg]) -> (Vec<(String, Range<usize>)>, bool) {
        let mut keywords = Vec::new();
        let mut has_star = false;
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                self.w(", ");
            }
            match a {
                Arg::Positional(e) => self.expr(e, prec::LAMBDA),
                Arg::Keyword { name, value } => {
                    let start = self.out.len();
                    self.w(name);
                    keywords.push((name.clone(), start..self.out.len()));
                    self.w("=");
                    self.expr(value, prec::LAMBDA);
                }
                Arg::Star(e) => {
                    has_star = true;
                    self.w("*");
                    self.expr(e, prec::BOR);
                }
                Arg::DoubleStar(e) => {
                    has_star = true;
                    self.w("**");
                    self.expr(e, prec::BOR);
                }
            }
        }
        (keywords, has_star)
    }

    fn comprehensions(&mut self, gens: &[Comprehension]) {
        for g in gens {
            self.w(if g.is_async { " async for " } else { " for " });
            self.target(&g.target);
            self.w(" in ");
            self.expr(&g.iter, prec::OR);
            for c in &g.ifs {
                self.w(" if ");
                self.expr(c, prec::OR);
            }
        }
    }

    fn expr(&mut self, e: &Expr, min: u8) {
        let needs_parens = match e {
            Expr::Yield(_) | Expr::YieldFrom(_) => true,
            _ => expr_prec(e) < min,
        };
        if needs_parens {
            self.w("(");
        }
        self.expr_inner(e);
        if needs_parens {
            self.w(")");
        }
    }

    fn expr_inner(&mut self, e: &Expr) {
        match e {
            Expr::Name(n) | Expr::Number(n) => self.w(n),
            Expr::Str(parts) => self.w(&parts.join(" ")),
            Expr::Ellipsis => self.w("..."),
            Expr::Attribute { value, attr } => {
                self.expr(value, prec::ATOM);
                if matches!(**value, Expr::Number(_)) {
                    self.w(" ");
                }
                self.w(".");
                self.w(attr);
            }
            Expr::Call { func, args } => {
                let start = self.out.len();
                self.expr(func, prec::ATOM);
                let callee_span = start..self.out.len();
                let statement = self.statements.len();
                let idx = self.calls.len();
                self.calls.push(CallSite {
                    callee: func.as_dotted(),
                    callee_span,
                    keywords: Vec::new(),
                    has_star: false,
                    statement,
                });
                self.w("(");
                let (keywords, has_star) = self.args(args);
                self.w(")");
                self.calls[idx].keywords = keywords;
                self.calls[idx].has_star = has_star;
            }
            Expr::Subscript { value, index } => {
                self.expr(value, prec::ATOM);
                self.w("[");
                match &**index {
                    Expr::Tuple(items) if !items.is_empty() => {
                        self.comma_sep(items, prec::NAMED);
                        if items.len() == 1 {
                            self.w(",");
                        }
                    }
                    other => self.expr(other, prec::NAMED),
                }
                self.w("]");
            }
            Expr::Slice { lower, upper, step } => {
                if let Some(l) = lower {
                    self.expr(l, prec::LAMBDA);
                }
                self.w(":");
                if let Some(u) = upper {
                    self.expr(u, prec::LAMBDA);
                }
                if let Some(s) = step {
                    self.w(":");
                    self.expr(s, prec::LAMBDA);
                }
            }
            Expr::BinOp { left, op, right } => {
                let p = binop_prec(*op);
                if *op == BinOp::Pow {
                    self.expr(left, prec::AWAIT);
                    self.w(" ** ");
                    self.expr(right, prec::FACTOR);
                } else {
                    self.expr(left, p);
                    self.w(" ");
                    self.w(op.symbol());
                    self.w(" ");
                    self.expr(right, p + 1);
                }
            }
            Expr::UnaryOp { op, operand } => match op {
                UnaryOp::Not => {
                    self.w("not ");
                    self.expr(operand, prec::NOT);
                }
                UnaryOp::Neg | UnaryOp::Pos | UnaryOp::Invert => {
                    self.w(match op {
                        UnaryOp::Neg => "-",
                        UnaryOp::Pos => "+",
                        _ => "~",
                    });
                    self.expr(operand, prec::FACTOR);
                }
            },
            Expr::BoolOp { op, values } => {
                let (sym, p) = match op {
                    BoolOp::And => (" and ", prec::AND),
                    BoolOp::Or => (" or ", prec::OR),
                };
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        self.w(sym);
                    }
                    self.expr(v, p + 1);
                }
            }
            Expr::Compare { left, rest } => {
                self.expr(left, prec::CMP + 1);
                for (op, e) in rest {
                    self.w(" ");
                    self.w(op.symbol());
                    self.w(" ");
                    self.expr(e, prec::CMP + 1);
                }
            }
            Expr::IfExp { test, body, orelse } => {
                self.expr(body, prec::IFEXP + 1);
                self.w(" if ");
                self.expr(test, prec::IFEXP + 1);
                self.w(" else ");
                self.expr(orelse, prec::IFEXP);
            }
            Expr::Lambda { params, body } => {
                self.w("lambda");
                if !params.is_empty() {
                    self.w(" ");
                    self.params(params, false);
                }
                self.w(": ");
                self.expr(body, prec::LAMBDA);
            }
            Expr::NamedExpr { target, value } => {
                self.w(target);
                self.w(" := ");
                self.expr(value, prec::LAMBDA);
            }
            Expr::Tuple(items) => {
                self.w("(");
                self.comma_sep(items, prec::NAMED);
                if items.len() == 1 {
                    self.w(",");
                }
                self.w(")");
            }
            Expr::List(items) => {
                self.w("[");
                self.comma_sep(items, prec::NAMED);
                self.w("]");
            }
            Expr::Set(items) => {
                self.w("{");
                self.comma_sep(items, prec::NAMED);
                self.w("}");
            }
            Expr::Dict(items) => {
                self.w("{");
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        self.w(", ");
                    }
                    match item {
                        DictItem::Pair(k, v) => {
                            self.expr(k, prec::LAMBDA);
                            self.w(": ");
                            self.expr(v, prec::LAMBDA);
                        }
                        DictItem::Splat(e) => {
                            self.w("**");
                            self.expr(e, prec::BOR);
                        }
                    }
                }
                self.w("}");
            }
            Expr::ListComp { elt, generators } => {
                self.w("[");
                self.expr(elt, prec::NAMED);
                self.comprehensions(generators);
                self.w("]");
            }
            Expr::SetComp { elt, generators } => {
                self.w("{");
                self.expr(elt, prec::NAMED);
                self.comprehensions(generators);
                self.w("}");
            }
            Expr::GeneratorExp { elt, generators } => {
                self.w("(");
                self.expr(elt, prec::NAMED);
                self.comprehensions(generators);
                self.w(")");
            }
            Expr::DictComp {
                key,
                value,
                generators,
            } => {
                self.w("{");
                self.expr(key, prec::LAMBDA);
                self.w(": ");
                self.expr(value, prec::LAMBDA);
                self.comprehensions(generators);
                self.w("}");
            }
            Expr::Starred(e) => {
                self.w("*");
                self.expr(e, prec::BOR);
            }
            Expr::Await(e) => {
                self.w("await ");
                self.expr(e, prec::ATOM);
            }
            Expr::Yield(_) | Expr::YieldFrom(_) => self.yield_expr(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::python::{parse_expression, parse_module};

    fn roundtrip(src: &str) -> String {
        unparse(&parse_module(src).unwrap())
    }

    #[test]
    fn canonical_call_style() {
        assert_eq!(
            roundtrip("nn.Linear( 128 ,out_features = 64 )\n"),
            "nn.Linear(128, out_features=64)\n"
        );
    }

    #[test]
    fn parenthesization_is_minimal_but_correct() {
        for (src, want) in [
            ("(a + b) * c", "(a + b) * c"),
            ("a + (b * c)", "a + b * c"),
            ("a - (b - c)", "a - (b - c)"),
            ("(-2) ** 2", "(-2) ** 2"),
            ("-(2 ** 2)", "-2 ** 2"),
            ("2 ** (3 ** 4)", "2 ** 3 ** 4"),
            ("(2 ** 3) ** 4", "(2 ** 3) ** 4"),
            ("not (a and b)", "not (a and b)"),
            ("(a if b else c) if d else e", "(a if b else c) if d else e"),
            ("(lambda: 1)()", "(lambda: 1)()"),
            ("x[1:2, ::3]", "x[1:2, ::3]"),
            ("f(*a, **k)", "f(*a, **k)"),
            ("(a, b)", "(a, b)"),
            ("(a,)", "(a,)"),
            ("(yield)", "(yield)"),
        ] {
            assert_eq!(
                unparse_expr(&parse_expression(src).unwrap()),
                want,
                "input {src}"
            );
        }
    }

    #[test]
    fn statements_render_one_per_line() {
        let src = "class A(B):\n\n    x: int = 1\n    def f(self, a, *, b=2) -> int:\n        if a:\n            return a, b\n        elif b:\n            pass\n        else:\n            raise E from e\n";
        let out = roundtrip(src);
        assert_eq!(
            out,
            "class A(B):\n    x: int = 1\n    def f(self, a, *, b=2) -> int:\n        if a:\n            return (a, b)\n        elif b:\n            pass\n        else:\n            raise E from e\n"
        );
        assert_eq!(roundtrip(&out), out);
    }

    #[test]
    fn call_sites_record_spans() {
        let r = render(&parse_module("x = nn.Sequential(nn.ReLU(), dim=1)\n").unwrap());
        assert_eq!(r.calls.len(), 2);
        assert_eq!(&r.text[r.calls[0].callee_span.clone()], "nn.Sequential");
        assert_eq!(&r.text[r.calls[1].callee_span.clone()], "nn.ReLU");
        let (name, span) = &r.calls[0].keywords[0];
        assert_eq!(name, "dim");
        assert_eq!(&r.text[span.clone()], "dim");
    }

    #[test]
    fn tuple_targets_lose_parens() {
        assert_eq!(
            roundtrip("for (i, x) in enumerate(y):\n    a, b = x\n"),
            "for i, x in enumerate(y):\n    a, b = x\n"
        );
    }
}

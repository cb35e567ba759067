//! Recursive-descent parser producing [`Module`] trees.

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::ParseError;

const RESERVED: &[&str] = &[
    "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del", "elif",
    "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda",
    "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

pub fn parse_module(src: &str) -> Result<Module, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut body = Vec::new();
    while !p.at_eof() {
        body.extend(p.statement()?);
    }
    Ok(Module { body })
}

/// Parses a single expression (used for dictionary fragments such as `layers.Dense`).
pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.star_expressions()?;
    if p.check_kind(&TokenKind::Newline) {
        p.pos += 1;
    }
    if !p.at_eof() {
        return Err(p.error("trailing input after expression"));
    }
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_nth(&self, n: usize) -> &Token {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)]
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokenKind::Eof
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        let t = self.peek();
        ParseError::new(
            t.line,
            t.col,
            format!("{} (found {:?})", msg.into(), t.kind),
        )
    }

    fn check_kind(&self, kind: &TokenKind) -> bool {
        &self.peek().kind == kind
    }

    fn check_op(&self, op: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Op(o) if *o == op)
    }

    fn check_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Name(n) if n == kw)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.check_op(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.check_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{op}'")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{kw}'")))
        }
    }

    fn expect_newline(&mut self) -> PResult<()> {
        if self.check_kind(&TokenKind::Newline) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error("expected end of line"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match &self.peek().kind {
            TokenKind::Name(n) if !RESERVED.contains(&n.as_str()) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn dotted_name(&mut self) -> PResult<String> {
        let mut name = self.ident()?;
        while self.check_op(".") {
            self.pos += 1;
            name.push('.');
            name.push_str(&self.ident()?);
        }
        Ok(name)
    }

    // ---- statements ----

    fn statement(&mut self) -> PResult<Vec<Stmt>> {
        if let TokenKind::Name(n) = &self.peek().kind {
            match n.as_str() {
                "if" | "while" | "for" | "try" | "with" | "def" | "class" => {
                    return Ok(vec![self.compound(Vec::new())?])
                }
                "async" => return Ok(vec![self.compound(Vec::new())?]),
                _ => {}
            }
        }
        if self.check_op("@") {
            let mut decorators = Vec::new();
            while self.eat_op("@") {
                decorators.push(self.named_expression()?);
                self.expect_newline()?;
            }
            if !(self.check_kw("def") || self.check_kw("class") || self.check_kw("async")) {
                return Err(self.error("decorator must precede def or class"));
            }
            return Ok(vec![self.compound(decorators)?]);
        }
        self.simple_statements()
    }

    fn simple_statements(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = vec![self.simple_statement()?];
        while self.eat_op(";") {
            if self.check_kind(&TokenKind::Newline) {
                break;
            }
            out.push(self.simple_statement()?);
        }
        self.expect_newline()?;
        Ok(out)
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_op(":")?;
        if self.check_kind(&TokenKind::Newline) {
            self.pos += 1;
            if !self.check_kind(&TokenKind::Indent) {
                return Err(self.error("expected an indented block"));
            }
            self.pos += 1;
            let mut body = Vec::new();
            while !self.check_kind(&TokenKind::Dedent) {
                if self.at_eof() {
                    return Err(self.error("unexpected end of input in block"));
                }
                body.extend(self.statement()?);
            }
            self.pos += 1;
            Ok(body)
        } else {
            self.simple_statements()
        }
    }

    fn compound(&mut self, decorators: Vec<Expr>) -> PResult<Stmt> {
        let is_async = self.eat_kw("async");
        let kw = match &self.peek().kind {
            TokenKind::Name(n) => n.clone(),
            _ => return Err(self.error("expected statement")),
        };
        if is_async && !matches!(kw.as_str(), "def" | "for" | "with") {
            return Err(self.error("'async' must precede def, for or with"));
        }
        if !decorators.is_empty() && !matches!(kw.as_str(), "def" | "class") {
            return Err(self.error("decorator must precede def or class"));
        }
        self.pos += 1;
        match kw.as_str() {
            "if" => self.if_rest(),
            "while" => {
                let test = self.named_expression()?;
                let body = self.block()?;
                let orelse = if self.eat_kw("else") {
                    self.block()?
                } else {
                    Vec::new()
                };
                Ok(Stmt::While { test, body, orelse })
            }
            "for" => {
                let target = self.target_list()?;
                self.expect_kw("in")?;
                let iter = self.star_expressions()?;
                let body = self.block()?;
                let orelse = if self.eat_kw("else") {
                    self.block()?
                } else {
                    Vec::new()
                };
                Ok(Stmt::For {
                    target,
                    iter,
                    body,
                    orelse,
                    is_async,
                })
            }
            "try" => {
                let body = self.block()?;
                let mut handlers = Vec::new();
                while self.eat_kw("except") {
                    let (typ, name) = if self.check_op(":") {
                        (None, None)
                    } else {
                        let typ = self.expression()?;
                        let name = if self.eat_kw("as") {
                            Some(self.ident()?)
                        } else {
                            None
                        };
                        (Some(typ), name)
                    };
                    handlers.push(ExceptHandler {
                        typ,
                        name,
                        body: self.block()?,
                    });
                }
                let orelse = if self.eat_kw("else") {
                    self.block()?
                } else {
                    Vec::new()
                };
                let finalbody = if self.eat_kw("finally") {
                    self.block()?
                } else {
                    Vec::new()
                };
                if handlers.is_empty() && finalbody.is_empty() {
                    return Err(self.error("try without except or finally"));
                }
                Ok(Stmt::Try {
                    body,
                    handlers,
                    orelse,
                    finalbody,
                })
            }
            "with" => {
                let mut items = Vec::new();
                loop {
                    let context = self.expression()?;
                    let target = if self.eat_kw("as") {
                        Some(self.single_target()?)
                    } else {
                        None
                    };
                    items.push(WithItem { context, target });
                    if !self.eat_op(",") {
                        break;
                    }
                }
                Ok(Stmt::With {
                    items,
                    body: self.block()?,
                    is_async,
                })
            }
            "def" => {
                let name = self.ident()?;
                self.expect_op("(")?;
                let params = self.params(")", true)?;
                self.expect_op(")")?;
                let returns = if self.eat_op("->") {
                    Some(self.expression()?)
                } else {
                    None
                };
                let body = self.block()?;
                Ok(Stmt::FunctionDef {
                    name,
                    params,
                    returns,
                    decorators,
                    body,
                    is_async,
                })
            }
            "class" => {
                let name = self.ident()?;
                let bases = if self.eat_op("(") {
                    let args = self.call_args()?;
                    self.expect_op(")")?;
                    args
                } else {
                    Vec::new()
                };
                let body = self.block()?;
                Ok(Stmt::ClassDef {
                    name,
                    bases,
                    decorators,
                    body,
                })
            }
            _ => Err(self.error("expected compound statement")),
        }
    }

    fn if_rest(&mut self) -> PResult<Stmt> {
        let test = self.named_expression()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("elif") {
            vec![self.if_rest()?]
        } else if self.eat_kw("else") {
            self.block()?
        } else {
            Vec::new()
        };
        Ok(Stmt::If { test, body, orelse })
    }

    fn simple_statement(&mut self) -> PResult<Stmt> {
        if let TokenKind::Name(n) = &self.peek().kind {
            match n.as_str() {
                "pass" => {
                    self.pos += 1;
                    return Ok(Stmt::Pass);
                }
                "break" => {
                    self.pos += 1;
                    return Ok(Stmt::Break);
                }
                "continue" => {
                    self.pos += 1;
                    return Ok(Stmt::Continue);
                }
                "return" => {
                    self.pos += 1;
                    let value = if self.at_stmt_end() {
                        None
                    } else {
                        Some(self.star_expressions()?)
                    };
                    return Ok(Stmt::Return(value));
                }
                "raise" => {
                    self.pos += 1;
                    if self.at_stmt_end() {
                        return Ok(Stmt::Raise {
                            exc: None,
                            cause: None,
                        });
                    }
                    let exc = self.expression()?;
                    let cause = if self.eat_kw("from") {
                        Some(self.expression()?)
                    } else {
                        None
                    };
                    return Ok(Stmt::Raise {
                        exc: Some(exc),
                        cause,
                    });
                }
                "global" | "nonlocal" => {
                    let global = n == "global";
                    self.pos += 1;
                    let mut names = vec![self.ident()?];
                    while self.eat_op(",") {
                        names.push(self.ident()?);
                    }
                    return Ok(if global {
                        Stmt::Global(names)
                    } else {
                        Stmt::Nonlocal(names)
                    });
                }
                "del" => {
                    self.pos += 1;
                    let mut targets = vec![self.bitor()?];
                    while self.eat_op(",") {
                        if self.at_stmt_end() {
                            break;
                        }
                        targets.push(self.bitor()?);
                    }
                    return Ok(Stmt::Del(targets));
                }
                "assert" => {
                    self.pos += 1;
                    let test = self.expression()?;
                    let msg = if self.eat_op(",") {
                        Some(self.expression()?)
                    } else {
                        None
                    };
                    return Ok(Stmt::Assert { test, msg });
                }
                "import" => {
                    self.pos += 1;
                    let mut names = Vec::new();
                    loop {
                        let name = self.dotted_name()?;
                        let asname = if self.eat_kw("as") {
                            Some(self.ident()?)
                        } else {
                            None
                        };
                        names.push(Alias { name, asname });
                        if !self.eat_op(",") {
                            break;
                        }
                    }
                    return Ok(Stmt::Import(names));
                }
                "from" => {
                    self.pos += 1;
                    return self.import_from();
                }
                _ => {}
            }
        }
        self.expression_statement()
    }

    fn at_stmt_end(&self) -> bool {
        self.check_kind(&TokenKind::Newline) || self.check_op(";") || self.at_eof()
    }

    fn import_from(&mut self) -> PResult<Stmt> {
        let mut level = 0;
        loop {
            if self.eat_op(".") {
                level += 1;
            } else if self.eat_op("...") {
                level += 3;
            } else {
                break;
            }
        }
        let module = if self.check_kw("import") {
            None
        } else {
            Some(self.dotted_name()?)
        };
        if module.is_none() && level == 0 {
            return Err(self.error("expected module name"));
        }
        self.expect_kw("import")?;
        let mut names = Vec::new();
        if self.eat_op("*") {
            names.push(Alias {
                name: "*".into(),
                asname: None,
            });
            return Ok(Stmt::ImportFrom {
                module,
                level,
                names,
            });
        }
        let paren = self.eat_op("(");
        loop {
            if paren && self.check_op(")") {
                break;
            }
            let name = self.ident()?;
            let asname = if self.eat_kw("as") {
                Some(self.ident()?)
            } else {
                None
            };
            names.push(Alias { name, asname });
            if !self.eat_op(",") {
                break;
            }
        }
        if paren {
            self.expect_op(")")?;
        }
        if names.is_empty() {
            return Err(self.error("empty import list"));
        }
        Ok(Stmt::ImportFrom {
            module,
            level,
            names,
        })
    }

    fn expression_statement(&mut self) -> PResult<Stmt> {
        let first = if self.check_kw("yield") {
            self.yield_expr()?
        } else {
            self.star_expressions()?
        };
        if self.check_op(":") {
            self.pos += 1;
            let annotation = self.expression()?;
            let value = if self.eat_op("=") {
                Some(if self.check_kw("yield") {
                    self.yield_expr()?
                } else {
                    self.star_expressions()?
                })
            } else {
                None
            };
            return Ok(Stmt::AnnAssign {
                target: first,
                annotation,
                value,
            });
        }
        if let TokenKind::Op(op) = self.peek().kind.clone() {
            if let Some(bin) = BinOp::from_augmented(op) {
                self.pos += 1;
                let value = if self.check_kw("yield") {
                    self.yield_expr()?
                } else {
                    self.star_expressions()?
                };
                return Ok(Stmt::AugAssign {
                    target: first,
                    op: bin,
                    value,
                });
            }
        }
        if self.check_op("=") {
            let mut targets = vec![first];
            while self.eat_op("=") {
                targets.push(if self.check_kw("yield") {
                    self.yield_expr()?
                } else {
                    self.star_expressions()?
                });
            }
            let value = targets.pop().expect("at least two items");
            return Ok(Stmt::Assign { targets, value });
        }
        Ok(Stmt::Expr(first))
    }

    fn yield_expr(&mut self) -> PResult<Expr> {
        self.expect_kw("yield")?;
        if self.eat_kw("from") {
            return Ok(Expr::YieldFrom(Box::new(self.expression()?)));
        }
        if self.at_stmt_end() || self.check_op(")") || self.check_op("=") {
            return Ok(Expr::Yield(None));
        }
        Ok(Expr::Yield(Some(Box::new(self.star_expressions()?))))
    }

    /// `for` and comprehension targets: comma-separated, tuple when a comma appears.
    fn target_list(&mut self) -> PResult<Expr> {
        let first = self.single_target()?;
        if !self.check_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.check_kw("in") || self.check_op("=") {
                break;
            }
            items.push(self.single_target()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn single_target(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.bitor()?)));
        }
        self.bitor()
    }

    // ---- parameters and arguments ----

    fn params(&mut self, close: &str, annotations: bool) -> PResult<Vec<Param>> {
        let mut params = Vec::new();
        while !self.check_op(close) {
            if self.eat_op("/") {
                params.push(Param::PosOnly);
            } else if self.eat_op("**") {
                let name = self.ident()?;
                let annotation = self.annotation(annotations)?;
                params.push(Param::VarKw { name, annotation });
            } else if self.eat_op("*") {
                if self.check_op(",") || self.check_op(close) {
                    params.push(Param::VarArgs {
                        name: None,
                        annotation: None,
                    });
                } else {
                    let name = self.ident()?;
                    let annotation = self.annotation(annotations)?;
                    params.push(Param::VarArgs {
                        name: Some(name),
                        annotation,
                    });
                }
            } else {
                let name = self.ident()?;
                let annotation = self.annotation(annotations)?;
                let default = if self.eat_op("=") {
                    Some(self.expression()?)
                } else {
                    None
                };
                params.push(Param::Plain {
                    name,
                    annotation,
                    default,
                });
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn annotation(&mut self, allowed: bool) -> PResult<Option<Expr>> {
        if allowed && self.eat_op(":") {
            Ok(Some(self.expression()?))
        } else {
            Ok(None)
        }
    }

    fn call_args(&mut self) -> PResult<Vec<Arg>> {
        let mut args = Vec::new();
        while !self.check_op(")") {
            if self.eat_op("**") {
                args.push(Arg::DoubleStar(self.expression()?));
            } else if self.eat_op("*") {
                args.push(Arg::Star(self.expression()?));
            } else if matches!(self.peek().kind, TokenKind::Name(_))
                && matches!(self.peek_nth(1).kind, TokenKind::Op("="))
            {
                let name = self.ident()?;
                self.expect_op("=")?;
                args.push(Arg::Keyword {
                    name,
                    value: self.expression()?,
                });
            } else {
                let value = self.named_expression()?;
                if self.check_kw("for") || self.check_kw("async") {
                    let generators = self.comprehensions()?;
                    args.push(Arg::Positional(Expr::GeneratorExp {
                        elt: Box::new(value),
                        generators,
                    }));
                } else {
                    args.push(Arg::Positional(value));
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(args)
    }

    // ---- expressions ----

    fn star_expressions(&mut self) -> PResult<Expr> {
        let first = self.star_expression()?;
        if !self.check_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_expr_list_end() {
                break;
            }
            items.push(self.star_expression()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn at_expr_list_end(&self) -> bool {
        self.at_stmt_end()
            || self.check_op("=")
            || self.check_op(")")
            || self.check_op(":")
            || matches!(&self.peek().kind, TokenKind::Op(o) if BinOp::from_augmented(o).is_some())
    }

    fn star_expression(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.bitor()?)));
        }
        self.expression()
    }

    fn named_expression(&mut self) -> PResult<Expr> {
        if matches!(self.peek().kind, TokenKind::Name(_))
            && matches!(self.peek_nth(1).kind, TokenKind::Op(":="))
        {
            let target = self.ident()?;
            self.expect_op(":=")?;
            let value = self.expression()?;
            return Ok(Expr::NamedExpr {
                target,
                value: Box::new(value),
            });
        }
        self.expression()
    }

    fn expression(&mut self) -> PResult<Expr> {
        if self.eat_kw("lambda") {
            let params = self.params(":", false)?;
            self.expect_op(":")?;
            let body = self.expression()?;
            return Ok(Expr::Lambda {
                params,
                body: Box::new(body),
            });
        }
        let body = self.disjunction()?;
        if self.eat_kw("if") {
            let test = self.disjunction()?;
            self.expect_kw("else")?;
            let orelse = self.expression()?;
            return Ok(Expr::IfExp {
                test: Box::new(test),
                body: Box::new(body),
                orelse: Box::new(orelse),
            });
        }
        Ok(body)
    }

    fn disjunction(&mut self) -> PResult<Expr> {
        let first = self.conjunction()?;
        if !self.check_kw("or") {
            return Ok(first);
        }
        let mut values = vec![first];
        while self.eat_kw("or") {
            values.push(self.conjunction()?);
        }
        Ok(Expr::BoolOp {
            op: BoolOp::Or,
            values,
        })
    }

    fn conjunction(&mut self) -> PResult<Expr> {
        let first = self.inversion()?;
        if !self.check_kw("and") {
            return Ok(first);
        }
        let mut values = vec![first];
        while self.eat_kw("and") {
            values.push(self.inversion()?);
        }
        Ok(Expr::BoolOp {
            op: BoolOp::And,
            values,
        })
    }

    fn inversion(&mut self) -> PResult<Expr> {
        if self.eat_kw("not") {
            return Ok(Expr::UnaryOp {
                op: UnaryOp::Not,
                operand: Box::new(self.inversion()?),
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let left = self.bitor()?;
        let mut rest = Vec::new();
        loop {
            let op = match &self.peek().kind {
                TokenKind::Op("==") => CmpOp::Eq,
                TokenKind::Op("!=") => CmpOp::NotEq,
                TokenKind::Op("<") => CmpOp::Lt,
                TokenKind::Op("<=") => CmpOp::LtE,
                TokenKind::Op(">") => CmpOp::Gt,
                TokenKind::Op(">=") => CmpOp::GtE,
                TokenKind::Name(n) if n == "in" => CmpOp::In,
                TokenKind::Name(n) if n == "is" => {
                    if matches!(&self.peek_nth(1).kind, TokenKind::Name(m) if m == "not") {
                        self.pos += 1;
                        CmpOp::IsNot
                    } else {
                        CmpOp::Is
                    }
                }
                TokenKind::Name(n)
                    if n == "not"
                        && matches!(&self.peek_nth(1).kind, TokenKind::Name(m) if m == "in") =>
                {
                    self.pos += 1;
                    CmpOp::NotIn
                }
                _ => break,
            };
            self.pos += 1;
            rest.push((op, self.bitor()?));
        }
        if rest.is_empty() {
            Ok(left)
        } else {
            Ok(Expr::Compare {
                left: Box::new(left),
                rest,
            })
        }
    }

    fn binary_level(
        &mut self,
        ops: &[(&str, BinOp)],
        next: fn(&mut Self) -> PResult<Expr>,
    ) -> PResult<Expr> {
        let mut left = next(self)?;
        'outer: loop {
            for (sym, op) in ops {
                if self.check_op(sym) {
                    self.pos += 1;
                    let right = next(self)?;
                    left = Expr::BinOp {
                        left: Box::new(left),
                        op: *op,
                        right: Box::new(right),
                    };
                    continue 'outer;
                }
            }
            return Ok(left);
        }
    }

    fn bitor(&mut self) -> PResult<Expr> {
        self.binary_level(&[("|", BinOp::BitOr)], Self::bitxor)
    }

    fn bitxor(&mut self) -> PResult<Expr> {
        self.binary_level(&[("^", BinOp::BitXor)], Self::bitand)
    }

    fn bitand(&mut self) -> PResult<Expr> {
        self.binary_level(&[("&", BinOp::BitAnd)], Self::shift)
    }

    fn shift(&mut self) -> PResult<Expr> {
        self.binary_level(&[("<<", BinOp::LShift), (">>", BinOp::RShift)], Self::sum)
    }

    fn sum(&mut self) -> PResult<Expr> {
        self.binary_level(&[("+", BinOp::Add), ("-", BinOp::Sub)], Self::term)
    }

    fn term(&mut self) -> PResult<Expr> {
        self.binary_level(
            &[
                ("*", BinOp::Mul),
                ("/", BinOp::Div),
                ("//", BinOp::FloorDiv),
                ("%", BinOp::Mod),
                ("@", BinOp::MatMul),
            ],
            Self::factor,
        )
    }

    fn factor(&mut self) -> PResult<Expr> {
        let op = if self.check_op("-") {
            UnaryOp::Neg
        } else if self.check_op("+") {
            UnaryOp::Pos
        } else if self.check_op("~") {
            UnaryOp::Invert
        } else {
            return self.power();
        };
        self.pos += 1;
        Ok(Expr::UnaryOp {
            op,
            operand: Box::new(self.factor()?),
        })
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = if self.eat_kw("await") {
            Expr::Await(Box::new(self.primary()?))
        } else {
            self.primary()?
        };
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::BinOp {
                left: Box::new(base),
                op: BinOp::Pow,
                right: Box::new(exp),
            });
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let mut expr = self.atom()?;
        loop {
            if self.eat_op(".") {
                let attr = self.ident()?;
                expr = Expr::Attribute {
                    value: Box::new(expr),
                    attr,
                };
            } else if self.eat_op("(") {
                let args = self.call_args()?;
                self.expect_op(")")?;
                expr = Expr::Call {
                    func: Box::new(expr),
                    args,
                };
            } else if self.eat_op("[") {
                let index = self.subscript()?;
                self.expect_op("]")?;
                expr = Expr::Subscript {
                    value: Box::new(expr),
                    index: Box::new(index),
                };
            } else {
                return Ok(expr);
            }
        }
    }

    fn subscript(&mut self) -> PResult<Expr> {
        let first = self.slice_item()?;
        if !self.check_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.check_op("]") {
                break;
            }
            items.push(self.slice_item()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn slice_item(&mut self) -> PResult<Expr> {
        let lower = if self.check_op(":") {
            None
        } else {
            Some(self.star_or_named()?)
        };
        if !self.eat_op(":") {
            return lower.ok_or_else(|| self.error("expected subscript"));
        }
        let bound = |p: &mut Self| -> PResult<Option<Box<Expr>>> {
            if p.check_op(":") || p.check_op(",") || p.check_op("]") {
                Ok(None)
            } else {
                Ok(Some(Box::new(p.expression()?)))
            }
        };
        let upper = bound(self)?;
        let step = if self.eat_op(":") { bound(self)? } else { None };
        Ok(Expr::Slice {
            lower: lower.map(Box::new),
            upper,
            step,
        })
    }

    fn star_or_named(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.bitor()?)));
        }
        self.named_expression()
    }

    fn comprehensions(&mut self) -> PResult<Vec<Comprehension>> {
        let mut gens = Vec::new();
        loop {
            let is_async = self.eat_kw("async");
            if !self.eat_kw("for") {
                if is_async {
                    return Err(self.error("expected 'for'"));
                }
                break;
            }
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.disjunction()?;
            let mut ifs = Vec::new();
            while self.eat_kw("if") {
                ifs.push(self.disjunction()?);
            }
            gens.push(Comprehension {
                target,
                iter,
                ifs,
                is_async,
            });
        }
        Ok(gens)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Name(n) => {
                if RESERVED.contains(&n.as_str()) {
                    return Err(self.error("unexpected keyword"));
                }
                self.pos += 1;
                Ok(Expr::Name(n))
            }
            TokenKind::Number(n) => {
                self.pos += 1;
                Ok(Expr::Number(n))
            }
            TokenKind::Str(_) => {
                let mut parts = Vec::new();
                while let TokenKind::Str(s) = &self.peek().kind {
                    parts.push(s.clone());
                    self.pos += 1;
                }
                Ok(Expr::Str(parts))
            }
            TokenKind::Op("...") => {
                self.pos += 1;
                Ok(Expr::Ellipsis)
            }
            TokenKind::Op("(") => {
                self.pos += 1;
                self.paren_rest()
            }
            TokenKind::Op("[") => {
                self.pos += 1;
                if self.eat_op("]") {
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.star_or_named()?;
                if self.check_kw("for") || self.check_kw("async") {
                    let generators = self.comprehensions()?;
                    self.expect_op("]")?;
                    return Ok(Expr::ListComp {
                        elt: Box::new(first),
                        generators,
                    });
                }
                let items = self.rest_of_items(first, "]")?;
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            TokenKind::Op("{") => {
                self.pos += 1;
                self.brace_rest()
            }
            _ => Err(self.error("expected expression")),
        }
    }

    fn rest_of_items(&mut self, first: Expr, close: &str) -> PResult<Vec<Expr>> {
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.check_op(close) {
                break;
            }
            items.push(self.star_or_named()?);
        }
        Ok(items)
    }

    fn paren_rest(&mut self) -> PResult<Expr> {
        if self.eat_op(")") {
            return Ok(Expr::Tuple(Vec::new()));
        }
        if self.check_kw("yield") {
            let y = self.yield_expr()?;
            self.expect_op(")")?;
            return Ok(y);
        }
        let first = self.star_or_named()?;
        if self.check_kw("for") || self.check_kw("async") {
            let generators = self.comprehensions()?;
            self.expect_op(")")?;
            return Ok(Expr::GeneratorExp {
                elt: Box::new(first),
                generators,
            });
        }
        if self.eat_op(")") {
            if matches!(first, Expr::Starred(_)) {
                return Err(self.error("starred expression needs a tuple"));
            }
            return Ok(first);
        }
        let items = self.rest_of_items(first, ")")?;
        self.expect_op(")")?;
        Ok(Expr::Tuple(items))
    }

    fn brace_rest(&mut self) -> PResult<Expr> {
        if self.eat_op("}") {
            return Ok(Expr::Dict(Vec::new()));
        }
        let first_item = if self.eat_op("**") {
            DictItem::Splat(self.bitor()?)
        } else {
            let first = self.star_or_named()?;
            if !self.eat_op(":") {
                if self.check_kw("for") || self.check_kw("async") {
                    let generators = self.comprehensions()?;
                    self.expect_op("}")?;
                    return Ok(Expr::SetComp {
                        elt: Box::new(first),
                        generators,
                    });
                }
                let items = self.rest_of_items(first, "}")?;
                self.expect_op("}")?;
                return Ok(Expr::Set(items));
            }
            let value = self.expression()?;
            if self.check_kw("for") || self.check_kw("async") {
                let generators = self.comprehensions()?;
                self.expect_op("}")?;
                return Ok(Expr::DictComp {
                    key: Box::new(first),
                    value: Box::new(value),
                    generators,
                });
            }
            DictItem::Pair(first, value)
        };
        let mut items = vec![first_item];
        while self.eat_op(",") {
            if self.check_op("}") {
                break;
            }
            if self.eat_op("**") {
                items.push(DictItem::Splat(self.bitor()?));
            } else {
                let k = self.expression()?;
                self.expect_op(":")?;
                let v = self.expression()?;
                items.push(DictItem::Pair(k, v));
            }
        }
        self.expect_op("}")?;
        Ok(Expr::Dict(items))
    }
}

//! Syntax tree for the supported Python subset.

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Module {
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alias {
    pub name: String,
    pub asname: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExceptHandler {
    pub typ: Option<Expr>,
    pub name: Option<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WithItem {
    pub context: Expr,
    pub target: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Expr(Expr),
    Assign {
        targets: Vec<Expr>,
        value: Expr,
    },
    AugAssign {
        target: Expr,
        op: BinOp,
        value: Expr,
    },
    AnnAssign {
        target: Expr,
        annotation: Expr,
        value: Option<Expr>,
    },
    Import(Vec<Alias>),
    ImportFrom {
        module: Option<String>,
        level: usize,
        names: Vec<Alias>,
    },
    ClassDef {
        name: String,
        bases: Vec<Arg>,
        decorators: Vec<Expr>,
        body: Vec<Stmt>,
    },
    FunctionDef {
        name: String,
        params: Vec<Param>,
        returns: Option<Expr>,
        decorators: Vec<Expr>,
        body: Vec<Stmt>,
        is_async: bool,
    },
    Return(Option<Expr>),
    Pass,
    Break,
    Continue,
    Raise {
        exc: Option<Expr>,
        cause: Option<Expr>,
    },
    Del(Vec<Expr>),
    Global(Vec<String>),
    Nonlocal(Vec<String>),
    Assert {
        test: Expr,
        msg: Option<Expr>,
    },
    If {
        test: Expr,
        body: Vec<Stmt>,
        orelse: Vec<Stmt>,
    },
    For {
        target: Expr,
        iter: Expr,
        body: Vec<Stmt>,
        orelse: Vec<Stmt>,
        is_async: bool,
    },
    While {
        test: Expr,
        body: Vec<Stmt>,
        orelse: Vec<Stmt>,
    },
    With {
        items: Vec<WithItem>,
        body: Vec<Stmt>,
        is_async: bool,
    },
    Try {
        body: Vec<Stmt>,
        handlers: Vec<ExceptHandler>,
        orelse: Vec<Stmt>,
        finalbody: Vec<Stmt>,
    },
}

/// One entry of a function or lambda parameter list, kept in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Param {
    Plain {
        name: String,
        annotation: Option<Expr>,
        default: Option<Expr>,
    },
    /// `*args`, or a bare `*` when `name` is `None`.
    VarArgs {
        name: Option<String>,
        annotation: Option<Expr>,
    },
    VarKw {
        name: String,
        annotation: Option<Expr>,
    },
    /// The positional-only marker `/`.
    PosOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Positional(Expr),
    Keyword { name: String, value: Expr },
    Star(Expr),
    DoubleStar(Expr),
}

impl Arg {
    pub fn is_star(&self) -> bool {
        matches!(self, Arg::Star(_) | Arg::DoubleStar(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    MatMul,
    Div,
    FloorDiv,
    Mod,
    Pow,
    LShift,
    RShift,
    BitOr,
    BitXor,
    BitAnd,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::MatMul => "@",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Pow => "**",
            BinOp::LShift => "<<",
            BinOp::RShift => ">>",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::BitAnd => "&",
        }
    }

    pub fn from_augmented(op: &str) -> Option<BinOp> {
        Some(match op {
            "+=" => BinOp::Add,
            "-=" => BinOp::Sub,
            "*=" => BinOp::Mul,
            "@=" => BinOp::MatMul,
            "/=" => BinOp::Div,
            "//=" => BinOp::FloorDiv,
            "%=" => BinOp::Mod,
            "**=" => BinOp::Pow,
            "<<=" => BinOp::LShift,
            ">>=" => BinOp::RShift,
            "|=" => BinOp::BitOr,
            "^=" => BinOp::BitXor,
            "&=" => BinOp::BitAnd,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
    Pos,
    Invert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtE,
    Gt,
    GtE,
    Is,
    IsNot,
    In,
    NotIn,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::NotEq => "!=",
            CmpOp::Lt => "<",
            CmpOp::LtE => "<=",
            CmpOp::Gt => ">",
            CmpOp::GtE => ">=",
            CmpOp::Is => "is",
            CmpOp::IsNot => "is not",
            CmpOp::In => "in",
            CmpOp::NotIn => "not in",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comprehension {
    pub target: Expr,
    pub iter: Expr,
    pub ifs: Vec<Expr>,
    pub is_async: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DictItem {
    Pair(Expr, Expr),
    Splat(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Name(String),
    /// Numeric literal, kept as written.
    Number(String),
    /// Adjacent string literals, each kept as written (f-strings stay opaque).
    Str(Vec<String>),
    Ellipsis,
    Attribute {
        value: Box<Expr>,
        attr: String,
    },
    Call {
        func: Box<Expr>,
        args: Vec<Arg>,
    },
    Subscript {
        value: Box<Expr>,
        index: Box<Expr>,
    },
    Slice {
        lower: Option<Box<Expr>>,
        upper: Option<Box<Expr>>,
        step: Option<Box<Expr>>,
    },
    BinOp {
        left: Box<Expr>,
        op: BinOp,
        right: Box<Expr>,
    },
    UnaryOp {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    BoolOp {
        op: BoolOp,
        values: Vec<Expr>,
    },
    Compare {
        left: Box<Expr>,
        rest: Vec<(CmpOp, Expr)>,
    },
    IfExp {
        test: Box<Expr>,
        body: Box<Expr>,
        orelse: Box<Expr>,
    },
    Lambda {
        params: Vec<Param>,
        body: Box<Expr>,
    },
    NamedExpr {
        target: String,
        value: Box<Expr>,
    },
    Tuple(Vec<Expr>),
    List(Vec<Expr>),
    Set(Vec<Expr>),
    Dict(Vec<DictItem>),
    ListComp {
        elt: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    SetComp {
        elt: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    DictComp {
        key: Box<Expr>,
        value: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    GeneratorExp {
        elt: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    Starred(Box<Expr>),
    Await(Box<Expr>),
    Yield(Option<Box<Expr>>),
    YieldFrom(Box<Expr>),
}

impl Expr {
    pub fn name(s: impl Into<String>) -> Expr {
        Expr::Name(s.into())
    }

    /// Builds `a.b.c` from a dotted string.
    pub fn dotted(path: &str) -> Expr {
        let mut parts = path.split('.');
        let mut expr = Expr::Name(parts.next().unwrap_or_default().to_string());
        for part in parts {
            expr = Expr::Attribute {
                value: Box::new(expr),
                attr: part.to_string(),
            };
        }
        expr
    }

    /// Returns `Some("a.b.c")` when the expression is a pure name/attribute chain.
    pub fn as_dotted(&self) -> Option<String> {
        match self {
            Expr::Name(n) => Some(n.clone()),
            Expr::Attribute { value, attr } => {
                value.as_dotted().map(|base| format!("{base}.{attr}"))
            }
            _ => None,
        }
    }
}

/// Mutable pre-order walk over every expression reachable from a statement list.
pub fn walk_stmts_mut(stmts: &mut [Stmt], f: &mut dyn FnMut(&mut Expr) -> bool) {
    for stmt in stmts {
        walk_stmt_mut(stmt, f);
    }
}

fn walk_params_mut(params: &mut [Param], f: &mut dyn FnMut(&mut Expr) -> bool) {
    for p in params {
        match p {
            Param::Plain {
                annotation,
                default,
                ..
            } => {
                if let Some(a) = annotation {
                    walk_expr_mut(a, f);
                }
                if let Some(d) = default {
                    walk_expr_mut(d, f);
                }
            }
            Param::VarArgs { annotation, .. } | Param::VarKw { annotation, .. } => {
                if let Some(a) = annotation {
                    walk_expr_mut(a, f);
                }
            }
            Param::PosOnly => {}
        }
    }
}

fn walk_args_mut(args: &mut [Arg], f: &mut dyn FnMut(&mut Expr) -> bool) {
    for a in args {
        match a {
            Arg::Positional(e)
            | Arg::Star(e)
            | Arg::DoubleStar(e)
            | Arg::Keyword { value: e, .. } => walk_expr_mut(e, f),
        }
    }
}

pub fn walk_stmt_mut(stmt: &mut Stmt, f: &mut dyn FnMut(&mut Expr) -> bool) {
    let opt = |e: &mut Option<Expr>, f: &mut dyn FnMut(&mut Expr) -> bool| {
        if let Some(e) = e {
            walk_expr_mut(e, f);
        }
    };
    match stmt {
        Stmt::Expr(e) => walk_expr_mut(e, f),
        Stmt::Assign { targets, value } => {
            for t in targets {
                walk_expr_mut(t, f);
            }
            walk_expr_mut(value, f);
        }
        Stmt::AugAssign { target, value, .. } => {
            walk_expr_mut(target, f);
            walk_expr_mut(value, f);
        }
        Stmt::AnnAssign {
            target,
            annotation,
            value,
        } => {
            walk_expr_mut(target, f);
            walk_expr_mut(annotation, f);
            opt(value, f);
        }
        Stmt::Import(_) | Stmt::ImportFrom { .. } => {}
        Stmt::ClassDef {
            bases,
            decorators,
            body,
            ..
        } => {
            for d in decorators.iter_mut() {
                walk_expr_mut(d, f);
            }
            walk_args_mut(bases, f);
            walk_stmts_mut(body, f);
        }
        Stmt::FunctionDef {
            params,
            returns,
            decorators,
            body,
            ..
        } => {
            for d in decorators.iter_mut() {
                walk_expr_mut(d, f);
            }
            walk_params_mut(params, f);
            opt(returns, f);
            walk_stmts_mut(body, f);
        }
        Stmt::Return(e) => opt(e, f),
        Stmt::Pass | Stmt::Break | Stmt::Continue | Stmt::Global(_) | Stmt::Nonlocal(_) => {}
        Stmt::Raise { exc, cause } => {
            opt(exc, f);
            opt(cause, f);
        }
        Stmt::Del(targets) => {
            for t in targets {
                walk_expr_mut(t, f);
            }
        }
        Stmt::Assert { test, msg } => {
            walk_expr_mut(test, f);
            opt(msg, f);
        }
        Stmt::If { test, body, orelse } | Stmt::While { test, body, orelse } => {
            walk_expr_mut(test, f);
            walk_stmts_mut(body, f);
            walk_stmts_mut(orelse, f);
        }
        Stmt::For {
            target,
            iter,
            body,
            orelse,
            ..
        } => {
            walk_expr_mut(target, f);
            walk_expr_mut(iter, f);
            walk_stmts_mut(body, f);
            walk_stmts_mut(orelse, f);
        }
        Stmt::With { items, body, .. } => {
            for item in items {
                walk_expr_mut(&mut item.context, f);
                opt(&mut item.target, f);
            }
            walk_stmts_mut(body, f);
        }
        Stmt::Try {
            body,
            handlers,
            orelse,
            finalbody,
        } => {
            walk_stmts_mut(body, f);
            for h in handlers {
                opt(&mut h.typ, f);
                walk_stmts_mut(&mut h.body, f);
            }
            walk_stmts_mut(orelse, f);
            walk_stmts_mut(finalbody, f);
        }
    }
}

/// Visits `expr` and, if the callback returns true, its children.
pub fn walk_expr_mut(expr: &mut Expr, f: &mut dyn FnMut(&mut Expr) -> bool) {
    if !f(expr) {
        return;
    }
    let comps = |gens: &mut Vec<Comprehension>, f: &mut dyn FnMut(&mut Expr) -> bool| {
        for g in gens {
            walk_expr_mut(&mut g.target, f);
            walk_expr_mut(&mut g.iter, f);
            for c in &mut g.ifs {
                walk_expr_mut(c, f);
            }
        }
    };
    match expr {
        Expr::Name(_) | Expr::Number(_) | Expr::Str(_) | Expr::Ellipsis => {}
        Expr::Attribute { value, .. } => walk_expr_mut(value, f),
        Expr::Call { func, args } => {
            walk_expr_mut(func, f);
            walk_args_mut(args, f);
        }
        Expr::Subscript { value, index } => {
            walk_expr_mut(value, f);
            walk_expr_mut(index, f);
        }
        Expr::Slice { lower, upper, step } => {
            for e in [lower, upper, step].into_iter().flatten() {
                walk_expr_mut(e, f);
            }
        }
        Expr::BinOp { left, right, .. } => {
            walk_expr_mut(left, f);
            walk_expr_mut(right, f);
        }
        Expr::UnaryOp { operand, .. } => walk_expr_mut(operand, f),
        Expr::BoolOp { values, .. }
        | Expr::Tuple(values)
        | Expr::List(values)
        | Expr::Set(values) => {
            for v in values {
                walk_expr_mut(v, f);
            }
        }
        Expr::Compare { left, rest } => {
            walk_expr_mut(left, f);
            for (_, e) in rest {
                walk_expr_mut(e, f);
            }
        }
        Expr::IfExp { test, body, orelse } => {
            walk_expr_mut(body, f);
            walk_expr_mut(test, f);
            walk_expr_mut(orelse, f);
        }
        Expr::Lambda { params, body } => {
            walk_params_mut(params, f);
            walk_expr_mut(body, f);
        }
        Expr::NamedExpr { value, .. } => walk_expr_mut(value, f),
        Expr::Dict(items) => {
            for item in items {
                match item {
                    DictItem::Pair(k, v) => {
                        walk_expr_mut(k, f);
                        walk_expr_mut(v, f);
                    }
                    DictItem::Splat(e) => walk_expr_mut(e, f),
                }
            }
        }
        Expr::ListComp { elt, generators }
        | Expr::SetComp { elt, generators }
        | Expr::GeneratorExp { elt, generators } => {
            walk_expr_mut(elt, f);
            comps(generators, f);
        }
        Expr::DictComp {
            key,
            value,
            generators,
        } => {
            walk_expr_mut(key, f);
            walk_expr_mut(value, f);
            comps(generators, f);
        }
        Expr::Starred(e) | Expr::Await(e) | Expr::YieldFrom(e) => walk_expr_mut(e, f),
        Expr::Yield(e) => {
            if let Some(e) = e {
                walk_expr_mut(e, f);
            }
        }
    }
}

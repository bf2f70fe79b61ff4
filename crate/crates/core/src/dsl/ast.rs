use std::fmt;

use serde::Serialize;

use crate::tensor::Shape;

/// Source location of a token or tree node. `line` and `col` are 1-based;
/// `start..end` are byte offsets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn to(self, other: Span) -> Span {
        Span {
            end: other.end.max(self.end),
            ..self
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ast {
    pub statements: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "stmt", rename_all = "snake_case")]
pub enum StmtKind {
    Decl {
        ty: DeclType,
        name: String,
    },
    Assign {
        name: String,
        expr: Expr,
    },
    /// A braced block.
    Seq {
        body: Vec<Stmt>,
    },
    IfThenElse {
        cond: Expr,
        then_branch: Box<Stmt>,
        else_branch: Box<Stmt>,
    },
    InitLiteral {
        name: String,
        value: Literal,
    },
}

/// Declared type with the optional sparsity attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DeclType {
    pub shape: Shape,
    pub sparse: Option<Sparsity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// nnz taken from the literal assigned to the variable.
    FromLiteral,
    Nnz(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Scalar(i64),
    Vector(Vec<i64>),
    Matrix(Vec<Vec<i64>>),
}

impl Literal {
    /// Shape of a rectangular literal; `None` for ragged rows.
    pub fn shape(&self) -> Option<Shape> {
        match self {
            Literal::Scalar(_) => Some(Shape::Scalar),
            Literal::Vector(v) => Some(Shape::Vector(v.len())),
            Literal::Matrix(rows) => {
                let c = rows.first().map_or(0, Vec::len);
                rows.iter()
                    .all(|r| r.len() == c)
                    .then_some(Shape::Matrix(rows.len(), c))
            }
        }
    }

    pub fn values(&self) -> Vec<i64> {
        match self {
            Literal::Scalar(v) => vec![*v],
            Literal::Vector(v) => v.clone(),
            Literal::Matrix(rows) => rows.concat(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "expr", rename_all = "snake_case")]
pub enum ExprKind {
    Var {
        name: String,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: Builtin,
        args: Vec<Expr>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Geq,
    SparseMul,
    HadamardMul,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Geq => ">=",
            BinOp::SparseMul => "|*|",
            BinOp::HadamardMul => "<*>",
        }
    }

    /// Binding strength; all binary operators associate to the left.
    pub fn precedence(&self) -> u8 {
        match self {
            BinOp::Geq => 1,
            BinOp::Add | BinOp::Sub => 2,
            BinOp::Mul | BinOp::SparseMul | BinOp::HadamardMul => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Sgn,
    Tanh,
    Exp,
    Relu,
    Sigmoid,
    Argmax,
    Dot,
    Outer,
}

impl Builtin {
    pub const ALL: [Builtin; 8] = [
        Builtin::Sgn,
        Builtin::Tanh,
        Builtin::Exp,
        Builtin::Relu,
        Builtin::Sigmoid,
        Builtin::Argmax,
        Builtin::Dot,
        Builtin::Outer,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Sgn => "sgn",
            Builtin::Tanh => "tanh",
            Builtin::Exp => "exp",
            Builtin::Relu => "relu",
            Builtin::Sigmoid => "sigmoid",
            Builtin::Argmax => "argmax",
            Builtin::Dot => "dot",
            Builtin::Outer => "outer",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Builtin::Dot | Builtin::Outer => 2,
            _ => 1,
        }
    }

    pub fn lookup(name: &str) -> Option<Builtin> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl Ast {
    /// Copy with every span zeroed, for comparing trees parsed from
    /// differently formatted text.
    pub fn without_spans(&self) -> Ast {
        fn stmt(s: &Stmt) -> Stmt {
            let kind = match &s.kind {
                StmtKind::Assign { name, expr } => StmtKind::Assign {
                    name: name.clone(),
                    expr: exp(expr),
                },
                StmtKind::Seq { body } => StmtKind::Seq {
                    body: body.iter().map(stmt).collect(),
                },
                StmtKind::IfThenElse {
                    cond,
                    then_branch,
                    else_branch,
                } => StmtKind::IfThenElse {
                    cond: exp(cond),
                    then_branch: Box::new(stmt(then_branch)),
                    else_branch: Box::new(stmt(else_branch)),
                },
                other => other.clone(),
            };
            Stmt {
                kind,
                span: Span::default(),
            }
        }
        fn exp(e: &Expr) -> Expr {
            let kind = match &e.kind {
                ExprKind::Var { name } => ExprKind::Var { name: name.clone() },
                ExprKind::Binary { op, lhs, rhs } => ExprKind::Binary {
                    op: *op,
                    lhs: Box::new(exp(lhs)),
                    rhs: Box::new(exp(rhs)),
                },
                ExprKind::Call { func, args } => ExprKind::Call {
                    func: *func,
                    args: args.iter().map(exp).collect(),
                },
            };
            Expr {
                kind,
                span: Span::default(),
            }
        }
        Ast {
            statements: self.statements.iter().map(stmt).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&AstDocument {
            schema: AST_SCHEMA,
            statements: &self.statements,
        })
        .expect("AST serializes")
    }
}

pub const AST_SCHEMA: &str = "matforge.ast/1";

#[derive(Serialize)]
struct AstDocument<'a> {
    schema: &'static str,
    statements: &'a [Stmt],
}

impl Expr {
    /// Operator applications in this expression tree.
    pub fn op_count(&self) -> usize {
        match &self.kind {
            ExprKind::Var { .. } => 0,
            ExprKind::Binary { lhs, rhs, .. } => 1 + lhs.op_count() + rhs.op_count(),
            ExprKind::Call { args, .. } => 1 + args.iter().map(Expr::op_count).sum::<usize>(),
        }
    }
}

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::*;
use crate::dfg::OpKind;
use crate::tensor::Shape;

pub type TensorType = Shape;

/// Declarations and the type of every expression in a checked program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymbolTable {
    pub types: BTreeMap<String, TensorType>,
    /// Buffer owned by each declared name (its declaration index).
    pub storage: BTreeMap<String, usize>,
    pub declared: Vec<String>,
    /// nnz of each sparse matrix.
    pub sparse: BTreeMap<String, u64>,
    pub expr_types: BTreeMap<Span, TensorType>,
}

impl SymbolTable {
    pub fn type_of(&self, name: &str) -> Option<TensorType> {
        self.types.get(name).copied()
    }

    pub fn is_sparse(&self, name: &str) -> bool {
        self.sparse.contains_key(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("{span}: `{op}` cannot combine {left} and {right}")]
    DimensionMismatch {
        op: String,
        left: Shape,
        right: Shape,
        span: Span,
    },
    #[error("{span}: `{op}` is not defined on {found}")]
    BadOperand {
        op: String,
        found: Shape,
        span: Span,
    },
    #[error("{span}: `{name}` used before its declaration")]
    UseBeforeDeclare { name: String, span: Span },
    #[error("{span}: `{name}` declared twice")]
    Redeclared { name: String, span: Span },
    #[error("{span}: `{name}` is declared {declared} but assigned {found}")]
    IncompatibleAssign {
        name: String,
        declared: Shape,
        found: Shape,
        span: Span,
    },
    #[error("{span}: literal for `{name}` does not match its declared type {declared}")]
    LiteralShape {
        name: String,
        declared: Shape,
        span: Span,
    },
    #[error("{span}: literal value {value} does not fit in 16 bits")]
    LiteralRange { value: i64, span: Span },
    #[error("{span}: {what} must be a scalar, found {found}")]
    NotScalar {
        what: String,
        found: Shape,
        span: Span,
    },
    #[error("{span}: {detail}")]
    Sparse { detail: String, span: Span },
}

impl TypeError {
    pub fn span(&self) -> Span {
        match self {
            TypeError::DimensionMismatch { span, .. }
            | TypeError::BadOperand { span, .. }
            | TypeError::UseBeforeDeclare { span, .. }
            | TypeError::Redeclared { span, .. }
            | TypeError::IncompatibleAssign { span, .. }
            | TypeError::LiteralShape { span, .. }
            | TypeError::LiteralRange { span, .. }
            | TypeError::NotScalar { span, .. }
            | TypeError::Sparse { span, .. } => *span,
        }
    }
}

/// DFG operation for a binary operator on operands of the given shapes,
/// and whether the operands are swapped (`M * s` becomes `s * M`).
pub(crate) fn binary_kind(op: BinOp, l: Shape, r: Shape) -> (OpKind, bool) {
    match op {
        BinOp::Add => (OpKind::MatAdd, false),
        BinOp::Sub => (OpKind::MatSub, false),
        BinOp::Geq => (OpKind::Geq, false),
        BinOp::HadamardMul => (OpKind::Hadamard, false),
        BinOp::SparseMul => (OpKind::SpMV, false),
        BinOp::Mul if l == Shape::Scalar => (OpKind::ScalarMatMul, false),
        BinOp::Mul if r == Shape::Scalar => (OpKind::ScalarMatMul, true),
        BinOp::Mul => (OpKind::MatMul, false),
    }
}

pub(crate) fn call_kind(f: Builtin) -> OpKind {
    match f {
        Builtin::Sgn => OpKind::Sgn,
        Builtin::Tanh => OpKind::TanH,
        Builtin::Exp => OpKind::Exp,
        Builtin::Relu => OpKind::ReLU,
        Builtin::Sigmoid => OpKind::Sigmoid,
        Builtin::Argmax => OpKind::ArgMax,
        Builtin::Dot => OpKind::DotProduct,
        Builtin::Outer => OpKind::OuterProduct,
    }
}

struct Checker {
    table: SymbolTable,
    decl_sparsity: BTreeMap<String, Sparsity>,
}

/// Checks declarations, shapes and sparse usage, returning the symbol table.
pub fn type_check(ast: &Ast) -> Result<SymbolTable, TypeError> {
    let mut c = Checker {
        table: SymbolTable::default(),
        decl_sparsity: BTreeMap::new(),
    };
    for s in &ast.statements {
        c.stmt(s)?;
    }
    Ok(c.table)
}

impl Checker {
    fn lookup(&self, name: &str, span: Span) -> Result<Shape, TypeError> {
        self.table
            .type_of(name)
            .ok_or_else(|| TypeError::UseBeforeDeclare {
                name: name.to_string(),
                span,
            })
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), TypeError> {
        match &s.kind {
            StmtKind::Decl { ty, name } => {
                if self.table.types.contains_key(name) {
                    return Err(TypeError::Redeclared {
                        name: name.clone(),
                        span: s.span,
                    });
                }
                if let Some(sp) = ty.sparse {
                    if ty.shape.rank() != 2 {
                        return Err(TypeError::Sparse {
                            detail: format!(
                                "only matrices can be sparse, `{name}` is {}",
                                ty.shape
                            ),
                            span: s.span,
                        });
                    }
                    if let Sparsity::Nnz(n) = sp {
                        if n > ty.shape.elements() as u64 {
                            return Err(TypeError::Sparse {
                                detail: format!(
                                    "nnz {n} exceeds the {} entries of `{name}`",
                                    ty.shape.elements()
                                ),
                                span: s.span,
                            });
                        }
                        self.table.sparse.insert(name.clone(), n);
                    }
                    self.decl_sparsity.insert(name.clone(), sp);
                }
                self.table
                    .storage
                    .insert(name.clone(), self.table.declared.len());
                self.table.declared.push(name.clone());
                self.table.types.insert(name.clone(), ty.shape);
            }
            StmtKind::Assign { name, expr } => {
                let declared = self.lookup(name, s.span)?;
                if self.decl_sparsity.contains_key(name) {
                    return Err(TypeError::Sparse {
                        detail: format!(
                            "sparse matrix `{name}` can only be initialized by a literal"
                        ),
                        span: s.span,
                    });
                }
                let found = self.expr(expr)?;
                if found != declared {
                    return Err(TypeError::IncompatibleAssign {
                        name: name.clone(),
                        declared,
                        found,
                        span: s.span,
                    });
                }
            }
            StmtKind::InitLiteral { name, value } => {
                let declared = self.lookup(name, s.span)?;
                if value.shape() != Some(declared) {
                    return Err(TypeError::LiteralShape {
                        name: name.clone(),
                        declared,
                        span: s.span,
                    });
                }
                let vals = value.values();
                if let Some(&v) = vals.iter().find(|&&v| i16::try_from(v).is_err()) {
                    return Err(TypeError::LiteralRange {
                        value: v,
                        span: s.span,
                    });
                }
                if let Some(&sp) = self.decl_sparsity.get(name) {
                    self.sparse_literal(name, sp, &vals, s.span)?;
                }
            }
            StmtKind::Seq { body } => {
                for b in body {
                    self.stmt(b)?;
                }
            }
            StmtKind::IfThenElse {
                cond,
                then_branch,
                else_branch,
            } => {
                let t = self.expr(cond)?;
                if t != Shape::Scalar {
                    return Err(TypeError::NotScalar {
                        what: "an if condition".into(),
                        found: t,
                        span: cond.span,
                    });
                }
                self.stmt(then_branch)?;
                self.stmt(else_branch)?;
            }
        }
        Ok(())
    }

    fn sparse_literal(
        &mut self,
        name: &str,
        sp: Sparsity,
        vals: &[i64],
        span: Span,
    ) -> Result<(), TypeError> {
        let nz = vals.iter().filter(|&&v| v != 0).count() as u64;
        let err = |detail: String| Err(TypeError::Sparse { detail, span });
        match sp {
            Sparsity::Nnz(n) if nz > n => err(format!(
                "literal for `{name}` has {nz} nonzeros, declared nnz is {n}"
            )),
            Sparsity::Nnz(_) => Ok(()),
            Sparsity::FromLiteral if self.table.sparse.contains_key(name) => {
                err(format!("sparse matrix `{name}` is initialized twice"))
            }
            Sparsity::FromLiteral if nz == 0 => {
                err(format!("literal for sparse `{name}` has no nonzeros"))
            }
            Sparsity::FromLiteral => {
                self.table.sparse.insert(name.to_string(), nz);
                Ok(())
            }
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<Shape, TypeError> {
        let t = match &e.kind {
            ExprKind::Var { name } => {
                let t = self.lookup(name, e.span)?;
                if self.decl_sparsity.contains_key(name) {
                    return Err(TypeError::Sparse {
                        detail: format!("sparse matrix `{name}` may only appear left of `|*|`"),
                        span: e.span,
                    });
                }
                t
            }
            ExprKind::Binary {
                op: BinOp::SparseMul,
                lhs,
                rhs,
            } => {
                let ExprKind::Var { name } = &lhs.kind else {
                    return Err(TypeError::Sparse {
                        detail: "the left operand of `|*|` must be a sparse matrix variable".into(),
                        span: lhs.span,
                    });
                };
                let l = self.lookup(name, lhs.span)?;
                if !self.decl_sparsity.contains_key(name) {
                    return Err(TypeError::Sparse {
                        detail: format!("`{name}` is not declared sparse"),
                        span: lhs.span,
                    });
                }
                let Some(&nnz) = self.table.sparse.get(name) else {
                    return Err(TypeError::Sparse {
                        detail: format!(
                            "sparse `{name}` is used before its literal gives an nnz count"
                        ),
                        span: lhs.span,
                    });
                };
                self.table.expr_types.insert(lhs.span, l);
                let r = self.expr(rhs)?;
                OpKind::SpMV
                    .infer_output(&[l, r], Some(nnz))
                    .map_err(|_| mismatch(BinOp::SparseMul, l, r, e.span))?
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.expr(lhs)?;
                let r = self.expr(rhs)?;
                let (kind, swap) = binary_kind(*op, l, r);
                let ins = if swap { [r, l] } else { [l, r] };
                kind.infer_output(&ins, None)
                    .map_err(|_| mismatch(*op, l, r, e.span))?
            }
            ExprKind::Call { func, args } => {
                let ts = args
                    .iter()
                    .map(|a| self.expr(a))
                    .collect::<Result<Vec<_>, _>>()?;
                let kind = call_kind(*func);
                match kind.infer_output(&ts, None) {
                    Ok(t) => t,
                    Err(_) if *func == Builtin::Sgn => {
                        return Err(TypeError::NotScalar {
                            what: "the argument of `sgn`".into(),
                            found: ts[0],
                            span: e.span,
                        })
                    }
                    Err(_) if ts.len() == 2 => {
                        return Err(TypeError::DimensionMismatch {
                            op: func.name().into(),
                            left: ts[0],
                            right: ts[1],
                            span: e.span,
                        })
                    }
                    Err(_) => {
                        return Err(TypeError::BadOperand {
                            op: func.name().into(),
                            found: ts[0],
                            span: e.span,
                        })
                    }
                }
            }
        };
        self.table.expr_types.insert(e.span, t);
        Ok(t)
    }
}

fn mismatch(op: BinOp, left: Shape, right: Shape, span: Span) -> TypeError {
    TypeError::DimensionMismatch {
        op: op.symbol().into(),
        left,
        right,
        span,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use Shape::*;

    fn check(src: &str) -> Result<SymbolTable, TypeError> {
        type_check(&parse(src).unwrap())
    }

    fn root_type(src: &str) -> Shape {
        let ast = parse(src).unwrap();
        let t = type_check(&ast).unwrap();
        let StmtKind::Assign { expr, .. } = &ast.statements.last().unwrap().kind else {
            panic!()
        };
        t.expr_types[&expr.span]
    }

    #[test]
    fn matmul_shape() {
        assert_eq!(
            root_type("int[2][3] A; int[3][4] B; int[2][4] C; C = A * B"),
            Matrix(2, 4)
        );
    }

    #[test]
    fn add_mismatch_reports_both_shapes() {
        let e = check("int[2][3] A; int[2][4] B; int[2][3] C; C = A + B").unwrap_err();
        assert_eq!(
            e,
            TypeError::DimensionMismatch {
                op: "+".into(),
                left: Matrix(2, 3),
                right: Matrix(2, 4),
                span: e.span()
            }
        );
        assert!(e.to_string().contains("int[2][3]") && e.to_string().contains("int[2][4]"));
    }

    #[test]
    fn sgn_of_scalar() {
        assert_eq!(root_type("int x; int r; r = sgn(x)"), Scalar);
        assert!(matches!(
            check("int[3] v; int r; r = sgn(v)"),
            Err(TypeError::NotScalar { .. })
        ));
    }

    #[test]
    fn scalar_mul_both_sides() {
        assert_eq!(root_type("int g; int[5] v; int[5] w; w = v * g"), Vector(5));
        assert_eq!(root_type("int g; int[5] v; int[5] w; w = g * v"), Vector(5));
        assert_eq!(root_type("int g; int h; int w; w = g * h"), Scalar);
    }

    #[test]
    fn all_matmul_modes() {
        assert_eq!(
            root_type("int[3][4] A; int[4] x; int[3] y; y = A * x"),
            Vector(3)
        );
        assert_eq!(
            root_type("int[3][4] A; int[3] x; int[4] y; y = x * A"),
            Vector(4)
        );
        assert!(check("int[3] a; int[3] b; int c; c = a * b").is_err());
        assert_eq!(
            root_type("int[3] a; int[3] b; int c; c = dot(a, b)"),
            Scalar
        );
        assert_eq!(
            root_type("int[3] a; int[2] b; int[3][2] c; c = outer(a, b)"),
            Matrix(3, 2)
        );
    }

    #[test]
    fn use_before_declare() {
        assert!(matches!(
            check("x = y; int x; int y"),
            Err(TypeError::UseBeforeDeclare { .. })
        ));
        assert!(matches!(
            check("int x; x = y"),
            Err(TypeError::UseBeforeDeclare { .. })
        ));
    }

    #[test]
    fn incompatible_reassignment() {
        let e = check("int[4] a; int[4][4] M; int[4] q; q = M * a; q = outer(a, a)").unwrap_err();
        assert!(matches!(
            e,
            TypeError::IncompatibleAssign {
                declared: Vector(4),
                found: Matrix(4, 4),
                ..
            }
        ));
    }

    #[test]
    fn literal_shape_checked() {
        assert!(check("int[2][2] M; M = [[1, 2], [3, 4]]").is_ok());
        assert!(matches!(
            check("int[2][2] M; M = [[1, 2], [3]]"),
            Err(TypeError::LiteralShape { .. })
        ));
        assert!(matches!(
            check("int[3] v; v = [1, 2]"),
            Err(TypeError::LiteralShape { .. })
        ));
        assert!(matches!(
            check("int x; x = 70000"),
            Err(TypeError::LiteralRange { .. })
        ));
    }

    #[test]
    fn sparse_rules() {
        let t = check(
            "sparse int[2][3] Z; int[3] x; int[2] y; Z = [[0, 1, 0], [2, 0, 0]]; y = Z |*| x",
        )
        .unwrap();
        assert_eq!(t.sparse["Z"], 2);
        let t = check("sparse(4) int[2][3] Z; int[3] x; int[2] y; y = Z |*| x").unwrap();
        assert_eq!(t.sparse["Z"], 4);
        assert!(check("sparse int[2][3] Z; int[3] x; int[2] y; y = Z |*| x").is_err());
        assert!(check("int[2][3] Z; int[3] x; int[2] y; y = Z |*| x").is_err());
        assert!(check("sparse(4) int[2][3] Z; int[3] x; int[2] y; y = Z * x").is_err());
        assert!(check("sparse(1) int[2][3] Z; Z = [[0, 1, 0], [2, 0, 0]]").is_err());
    }

    #[test]
    fn condition_must_be_scalar() {
        let e =
            check("int[2] a; int[2] b; int[2] c; if (a >= b) then c = a else c = b").unwrap_err();
        assert!(matches!(
            e,
            TypeError::NotScalar {
                found: Vector(2),
                ..
            }
        ));
        assert!(
            check("int a; int b; int[2] c; int[2] d; if (a >= b) then c = d else c = c").is_ok()
        );
    }

    #[test]
    fn storage_is_injective() {
        let t = check("int a; int[2] b; int[3][3] c").unwrap();
        let mut ids: Vec<usize> = t.storage.values().copied().collect();
        ids.dedup();
        assert_eq!(ids.len(), 3);
        assert_eq!(t.declared, ["a", "b", "c"]);
    }
}

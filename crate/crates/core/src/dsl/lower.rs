use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::ast::*;
use super::typeck::{binary_kind, call_kind, SymbolTable};
use crate::dfg::{DfgBuilder, DfgError, MatrixDfg, NodeId, OpKind};
use crate::tensor::TensorValue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LowerError {
    #[error("{}: unsupported construct: {detail}", span.map_or("?".to_string(), |s| s.to_string()))]
    Unsupported { detail: String, span: Option<Span> },
    #[error("{0}")]
    Dfg(#[from] DfgError),
}

impl LowerError {
    pub fn span(&self) -> Option<Span> {
        match self {
            LowerError::Unsupported { span, .. } => *span,
            LowerError::Dfg(_) => None,
        }
    }
}

/// A lowered program together with the node computing each expression.
#[derive(Debug, Clone)]
pub struct Lowered {
    pub dfg: MatrixDfg,
    /// Node holding the value of every expression, keyed by its span.
    pub values: BTreeMap<Span, NodeId>,
    /// Program outputs in declaration order.
    pub outputs: Vec<(String, NodeId)>,
}

pub fn lower_to_dfg(ast: &Ast, symbols: &SymbolTable) -> Result<MatrixDfg, LowerError> {
    lower_with_map(ast, symbols).map(|l| l.dfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Value {
    Node(NodeId),
    /// Literal from the statement at this span, materialized on first read.
    Literal(Span),
}

#[derive(Clone, Copy, Debug, Default)]
struct DefState {
    /// The current value came from an expression (not a literal or input).
    computed: bool,
    read_since: bool,
}

struct Lowerer<'a> {
    symbols: &'a SymbolTable,
    b: DfgBuilder,
    literals: BTreeMap<Span, Vec<i16>>,
    constants: BTreeMap<Span, NodeId>,
    inputs: BTreeMap<String, NodeId>,
    source_names: BTreeSet<String>,
    defs: BTreeMap<String, DefState>,
    labels: BTreeMap<NodeId, String>,
    values: BTreeMap<Span, NodeId>,
}

type Env = BTreeMap<String, Value>;

/// Lowers a checked program. Every assignment creates fresh nodes, so a
/// reassigned variable simply names a newer value and the graph stays
/// acyclic. Values that are never read again become sinks.
pub fn lower_with_map(ast: &Ast, symbols: &SymbolTable) -> Result<Lowered, LowerError> {
    let mut l = Lowerer {
        symbols,
        b: DfgBuilder::new(),
        literals: BTreeMap::new(),
        constants: BTreeMap::new(),
        inputs: BTreeMap::new(),
        source_names: BTreeSet::new(),
        defs: BTreeMap::new(),
        labels: BTreeMap::new(),
        values: BTreeMap::new(),
    };
    let mut env = Env::new();
    for s in &ast.statements {
        l.stmt(s, &mut env)?;
    }

    let mut outputs = Vec::new();
    for name in &symbols.declared {
        let st = l.defs.get(name).copied().unwrap_or_default();
        if let (true, false, Some(&Value::Node(n))) = (st.computed, st.read_since, env.get(name)) {
            l.b.sink(name.clone(), n)?;
            outputs.push((name.clone(), n));
        }
    }
    // Sources count too: a copy such as `x = x` reads an input that a later
    // assignment may leave without consumers.
    let sources = l.inputs.iter().map(|(name, &n)| (n, name.clone()));
    let constants: Vec<(NodeId, String)> = l
        .constants
        .values()
        .map(|&n| (n, l.b.name(n).unwrap_or("const").to_string()))
        .collect();
    let mut labelled: BTreeMap<NodeId, String> =
        l.labels.iter().map(|(&n, s)| (n, s.clone())).collect();
    labelled.extend(sources.chain(constants));
    for (n, label) in labelled {
        if l.b.fanout(n) == 0 {
            l.b.sink(format!("{label}_n{}", n.0), n)?;
        }
    }
    Ok(Lowered {
        dfg: l.b.build()?,
        values: l.values,
        outputs,
    })
}

impl Lowerer<'_> {
    fn unsupported(detail: impl Into<String>, span: Span) -> LowerError {
        LowerError::Unsupported {
            detail: detail.into(),
            span: Some(span),
        }
    }

    fn source_name(&mut self, var: &str) -> String {
        let mut name = var.to_string();
        let mut k = 1;
        while self.source_names.contains(&name) {
            name = format!("{var}_v{k}");
            k += 1;
        }
        self.source_names.insert(name.clone());
        name
    }

    fn define(&mut self, name: &str, computed: bool) {
        self.defs.insert(
            name.to_string(),
            DefState {
                computed,
                read_since: false,
            },
        );
    }

    fn read(&mut self, name: &str, span: Span, env: &mut Env) -> Result<NodeId, LowerError> {
        if let Some(d) = self.defs.get_mut(name) {
            d.read_since = true;
        }
        match env.get(name).copied() {
            Some(Value::Node(n)) => Ok(n),
            Some(Value::Literal(at)) => {
                if let Some(&n) = self.constants.get(&at) {
                    return Ok(n);
                }
                let shape = self
                    .symbols
                    .type_of(name)
                    .ok_or_else(|| Self::unsupported(format!("`{name}` has no type"), span))?;
                let data = self.literals[&at].clone();
                let value = TensorValue::new(shape, data)
                    .map_err(|e| Self::unsupported(e.to_string(), at))?;
                let src = self.source_name(name);
                let n = self.b.constant(src, value);
                self.constants.insert(at, n);
                Ok(n)
            }
            None => {
                if let Some(&n) = self.inputs.get(name) {
                    return Ok(n);
                }
                let shape = self
                    .symbols
                    .type_of(name)
                    .ok_or_else(|| Self::unsupported(format!("`{name}` is not declared"), span))?;
                let src = self.source_name(name);
                let n = self.b.source(src, shape);
                self.inputs.insert(name.to_string(), n);
                Ok(n)
            }
        }
    }

    fn stmt(&mut self, s: &Stmt, env: &mut Env) -> Result<(), LowerError> {
        match &s.kind {
            StmtKind::Decl { .. } => {}
            StmtKind::Assign { name, expr } => {
                let n = self.expr(expr, env, name)?;
                env.insert(name.clone(), Value::Node(n));
                self.define(name, true);
            }
            StmtKind::InitLiteral { name, value } => {
                let data = value
                    .values()
                    .into_iter()
                    .map(|v| {
                        i16::try_from(v).map_err(|_| {
                            Self::unsupported(format!("{v} overflows 16 bits"), s.span)
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                self.literals.insert(s.span, data);
                env.insert(name.clone(), Value::Literal(s.span));
                self.define(name, false);
            }
            StmtKind::Seq { body } => {
                for b in body {
                    self.stmt(b, env)?;
                }
            }
            StmtKind::IfThenElse {
                cond,
                then_branch,
                else_branch,
            } => {
                let c = self.expr(cond, env, "cond")?;
                let mut te = env.clone();
                let mut ee = env.clone();
                self.stmt(then_branch, &mut te)?;
                self.stmt(else_branch, &mut ee)?;
                let changed: BTreeSet<String> = te
                    .keys()
                    .chain(ee.keys())
                    .filter(|k| te.get(*k) != ee.get(*k))
                    .cloned()
                    .collect();
                *env = te;
                for name in changed {
                    let t = self.read(&name, s.span, env)?;
                    let e = self.read(&name, s.span, &mut ee)?;
                    let sel = self.b.op(OpKind::Select, &[c, t, e], None)?;
                    self.labels.insert(sel, name.clone());
                    env.insert(name.clone(), Value::Node(sel));
                    self.define(&name, true);
                }
            }
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr, env: &mut Env, label: &str) -> Result<NodeId, LowerError> {
        let n = match &e.kind {
            ExprKind::Var { name } => self.read(name, e.span, env)?,
            ExprKind::Binary {
                op: BinOp::SparseMul,
                lhs,
                rhs,
            } => {
                let ExprKind::Var { name } = &lhs.kind else {
                    return Err(Self::unsupported(
                        "`|*|` needs a sparse matrix variable on the left",
                        lhs.span,
                    ));
                };
                let nnz = *self.symbols.sparse.get(name).ok_or_else(|| {
                    Self::unsupported(format!("`{name}` has no nnz count"), lhs.span)
                })?;
                let z = self.read(name, lhs.span, env)?;
                self.values.insert(lhs.span, z);
                let x = self.expr(rhs, env, label)?;
                self.op(OpKind::SpMV, &[z, x], Some(nnz), label)?
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.expr(lhs, env, label)?;
                let r = self.expr(rhs, env, label)?;
                let (ls, rs) = (self.b_shape(l), self.b_shape(r));
                let (kind, swap) = binary_kind(*op, ls, rs);
                let ins = if swap { [r, l] } else { [l, r] };
                self.op(kind, &ins, None, label)?
            }
            ExprKind::Call { func, args } => {
                let ins = args
                    .iter()
                    .map(|a| self.expr(a, env, label))
                    .collect::<Result<Vec<_>, _>>()?;
                self.op(call_kind(*func), &ins, None, label)?
            }
        };
        self.values.insert(e.span, n);
        Ok(n)
    }

    fn op(
        &mut self,
        kind: OpKind,
        ins: &[NodeId],
        nnz: Option<u64>,
        label: &str,
    ) -> Result<NodeId, LowerError> {
        let n = self.b.op(kind, ins, nnz)?;
        self.labels.insert(n, label.to_string());
        Ok(n)
    }

    fn b_shape(&self, n: NodeId) -> crate::tensor::Shape {
        self.b.shape(n).expect("node was created by this lowering")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, type_check};
    use crate::tensor::Shape::*;

    fn lower(src: &str) -> Lowered {
        let ast = parse(src).unwrap();
        let t = type_check(&ast).unwrap();
        lower_with_map(&ast, &t).unwrap()
    }

    fn count(g: &MatrixDfg, k: OpKind) -> usize {
        g.nodes().filter(|n| n.kind == k).count()
    }

    #[test]
    fn matrix_add() {
        let g = lower("int[2][2] A; int[2][2] B; int[2][2] C; C = A + B").dfg;
        assert_eq!(count(&g, OpKind::Source), 2);
        assert_eq!(count(&g, OpKind::MatAdd), 1);
        assert_eq!(count(&g, OpKind::Sink), 1);
        assert_eq!(g.len(), 4);
        assert_eq!(g.sinks().next().unwrap().name.as_deref(), Some("C"));
    }

    #[test]
    fn sgn_single_node() {
        let g = lower("int x; int R; R = sgn(x)").dfg;
        assert_eq!(g.compute_nodes().count(), 1);
        let n = g.compute_nodes().next().unwrap();
        assert_eq!(n.kind, OpKind::Sgn);
        assert_eq!(n.out_dim(), Scalar);
    }

    #[test]
    fn reassignment_is_renamed() {
        let l = lower("int[4] a; int[4] q; q = a + a; q = q + a; q = relu(q)");
        assert_eq!(l.dfg.compute_nodes().count(), 3);
        assert_eq!(count(&l.dfg, OpKind::Sink), 1);
        assert_eq!(l.outputs.len(), 1);
    }

    #[test]
    fn intermediate_is_not_an_output() {
        let l = lower("int[4] a; int[4] t; int[4] c; t = a + a; c = relu(t)");
        assert_eq!(
            l.outputs.iter().map(|o| o.0.as_str()).collect::<Vec<_>>(),
            ["c"]
        );
    }

    #[test]
    fn overwritten_value_gets_its_own_sink() {
        let l = lower("int[4] a; int[4] t; t = a + a; t = a - a");
        assert_eq!(count(&l.dfg, OpKind::Sink), 2);
    }

    #[test]
    fn copied_input_that_is_overwritten_still_has_a_consumer() {
        let l = lower("int[2] x; int[2] y; x = x; x = y + y");
        let src = l
            .dfg
            .sources()
            .find(|n| n.name.as_deref() == Some("x"))
            .unwrap()
            .id;
        let sink = l.dfg.successors(src).next().unwrap();
        assert_eq!(l.dfg.node(sink).kind, OpKind::Sink);
        assert_eq!(l.dfg.node(sink).name.as_deref(), Some("x_n0"));
    }

    #[test]
    fn literals_become_constants() {
        let l = lower("int[2] w; int[2] x; int[2] y; w = [3, -1]; y = w <*> x");
        let c: Vec<_> = l.dfg.sources().filter(|n| n.constant.is_some()).collect();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].constant.as_deref(), Some(&[3i16, -1][..]));
        assert_eq!(l.dfg.inputs().count(), 1);
    }

    #[test]
    fn conditional_becomes_select() {
        let l = lower("int a; int b; int[3] u; int[3] v; int[3] r; if (a >= b) then r = relu(u) else r = u <*> v");
        assert_eq!(count(&l.dfg, OpKind::Select), 1);
        assert_eq!(count(&l.dfg, OpKind::Geq), 1);
        let sel = l.dfg.nodes().find(|n| n.kind == OpKind::Select).unwrap();
        assert_eq!(sel.dims.in_dims, vec![Scalar, Vector(3), Vector(3)]);
        assert_eq!(l.outputs, vec![("r".to_string(), sel.id)]);
    }

    #[test]
    fn sparse_nnz_flows_to_spmv() {
        let l = lower(
            "sparse int[2][3] Z; int[3] x; int[2] y; Z = [[0, 5, 0], [0, 0, 7]]; y = Z |*| x",
        );
        let s = l.dfg.nodes().find(|n| n.kind == OpKind::SpMV).unwrap();
        assert_eq!(s.dims.nnz, Some(2));
        assert!(l
            .dfg
            .is_sparse_source(l.dfg.predecessors(s.id).next().unwrap()));
    }
}

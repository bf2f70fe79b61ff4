use std::fmt::Write;

use super::ast::*;
use crate::tensor::Shape;

/// Renders a program in canonical form: one statement per line, `;`
/// after every statement, blocks indented by four spaces and only the
/// parentheses that precedence requires.
pub fn pretty_print(ast: &Ast) -> String {
    let mut out = String::new();
    for s in &ast.statements {
        stmt(&mut out, s, 0);
        out.push_str(";\n");
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    out.extend(std::iter::repeat_n("    ", depth));
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    stmt_inline(out, s, depth);
}

fn stmt_inline(out: &mut String, s: &Stmt, depth: usize) {
    match &s.kind {
        StmtKind::Decl { ty, name } => {
            match ty.sparse {
                Some(Sparsity::FromLiteral) => out.push_str("sparse "),
                Some(Sparsity::Nnz(n)) => {
                    let _ = write!(out, "sparse({n}) ");
                }
                None => {}
            }
            let _ = write!(out, "{} {name}", type_text(ty.shape));
        }
        StmtKind::Assign { name, expr: e } => {
            let _ = write!(out, "{name} = ");
            expr(out, e, 0);
        }
        StmtKind::InitLiteral { name, value } => {
            let _ = write!(out, "{name} = {}", literal_text(value));
        }
        StmtKind::Seq { body } => {
            out.push_str("{\n");
            for b in body {
                stmt(out, b, depth + 1);
                out.push_str(";\n");
            }
            indent(out, depth);
            out.push('}');
        }
        StmtKind::IfThenElse {
            cond,
            then_branch,
            else_branch,
        } => {
            out.push_str("if (");
            expr(out, cond, 0);
            out.push_str(") then ");
            stmt_inline(out, then_branch, depth);
            out.push_str(" else ");
            stmt_inline(out, else_branch, depth);
        }
    }
}

fn type_text(s: Shape) -> String {
    s.to_string()
}

fn literal_text(v: &Literal) -> String {
    let row = |r: &[i64]| {
        format!(
            "[{}]",
            r.iter().map(i64::to_string).collect::<Vec<_>>().join(", ")
        )
    };
    match v {
        Literal::Scalar(n) => n.to_string(),
        Literal::Vector(v) => row(v),
        Literal::Matrix(rows) => format!(
            "[{}]",
            rows.iter().map(|r| row(r)).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Writes `e`, parenthesized when it binds looser than its context.
/// `min_prec` is the precedence an unparenthesized operand must exceed
/// (right operands) or reach (left operands, passed as one less).
fn expr(out: &mut String, e: &Expr, min_prec: u8) {
    match &e.kind {
        ExprKind::Var { name } => out.push_str(name),
        ExprKind::Call { func, args } => {
            let _ = write!(out, "{}(", func.name());
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(out, a, 0);
            }
            out.push(')');
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            let paren = p <= min_prec;
            if paren {
                out.push('(');
            }
            expr(out, lhs, p - 1);
            let _ = write!(out, " {} ", op.symbol());
            expr(out, rhs, p);
            if paren {
                out.push(')');
            }
        }
    }
}

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;
use crate::tensor::Shape;

/// Parses a whole `.mfd` program.
pub fn parse(src: &str) -> Result<Ast, ParseError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    let statements = p.block(&Tok::Eof)?;
    Ok(Ast { statements })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        let s = self.span();
        ParseError::syntax(s.line, s.col, msg)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        self.error(format!(
            "expected {wanted}, found {}",
            self.peek().describe()
        ))
    }

    fn expect(&mut self, t: Tok) -> Result<Span, ParseError> {
        if *self.peek() == t {
            Ok(self.bump().span)
        } else {
            Err(self.unexpected(&t.describe()))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => Ok((s, self.bump().span)),
            _ => Err(self.unexpected("an identifier")),
        }
    }

    fn positive(&mut self, what: &str) -> Result<u64, ParseError> {
        match *self.peek() {
            Tok::Int(n) if n > 0 => {
                self.bump();
                Ok(n as u64)
            }
            _ => Err(self.unexpected(&format!("a positive {what}"))),
        }
    }

    /// Statements up to `end` (not consumed). Separators are `;`; a
    /// statement ending in `}` may omit its separator.
    fn block(&mut self, end: &Tok) -> Result<Vec<Stmt>, ParseError> {
        let mut out = Vec::new();
        loop {
            while *self.peek() == Tok::Semi {
                self.bump();
            }
            if self.peek() == end {
                return Ok(out);
            }
            if *self.peek() == Tok::Eof {
                return Err(self.unexpected(&end.describe()));
            }
            let s = self.stmt()?;
            out.push(s);
            let closed = self.toks[self.pos - 1].tok == Tok::RBrace;
            if *self.peek() != Tok::Semi && self.peek() != end && !closed {
                return Err(self.unexpected("`;`"));
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.span();
        let kind = match self.peek().clone() {
            Tok::KwInt | Tok::KwSparse => {
                let ty = self.decl_type()?;
                let (name, _) = self.ident()?;
                StmtKind::Decl { ty, name }
            }
            Tok::KwIf => {
                self.bump();
                self.expect(Tok::LParen)?;
                let cond = self.expr(0)?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::KwThen)?;
                let then_branch = Box::new(self.stmt()?);
                self.expect(Tok::KwElse)?;
                let else_branch = Box::new(self.stmt()?);
                StmtKind::IfThenElse {
                    cond,
                    then_branch,
                    else_branch,
                }
            }
            Tok::LBrace => {
                self.bump();
                let body = self.block(&Tok::RBrace)?;
                self.bump();
                StmtKind::Seq { body }
            }
            Tok::Ident(name) => {
                self.bump();
                self.expect(Tok::Assign)?;
                match self.peek() {
                    Tok::Int(_) | Tok::Minus | Tok::LBracket => StmtKind::InitLiteral {
                        name,
                        value: self.literal()?,
                    },
                    _ => StmtKind::Assign {
                        name,
                        expr: self.expr(0)?,
                    },
                }
            }
            _ => return Err(self.unexpected("a statement")),
        };
        Ok(Stmt {
            kind,
            span: start.to(self.prev_span()),
        })
    }

    fn decl_type(&mut self) -> Result<DeclType, ParseError> {
        let mut sparse = None;
        if *self.peek() == Tok::KwSparse {
            self.bump();
            sparse = Some(if *self.peek() == Tok::LParen {
                self.bump();
                let n = self.positive("nnz count")?;
                self.expect(Tok::RParen)?;
                Sparsity::Nnz(n)
            } else {
                Sparsity::FromLiteral
            });
        }
        self.expect(Tok::KwInt)?;
        let mut dims = Vec::new();
        while *self.peek() == Tok::LBracket {
            if dims.len() == 2 {
                return Err(self.error("at most two dimensions are supported"));
            }
            self.bump();
            dims.push(self.positive("dimension")? as usize);
            self.expect(Tok::RBracket)?;
        }
        let shape = Shape::from_dims(&dims).map_err(|e| self.error(e.to_string()))?;
        Ok(DeclType { shape, sparse })
    }

    fn int(&mut self, open: Span) -> Result<i64, ParseError> {
        let neg = *self.peek() == Tok::Minus;
        if neg {
            self.bump();
        }
        match *self.peek() {
            Tok::Int(n) => {
                self.bump();
                Ok(if neg { -n } else { n })
            }
            Tok::Eof | Tok::Semi => Err(ParseError::unterminated(open.line, open.col)),
            _ => Err(self.unexpected("an integer")),
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let open = self.span();
        if *self.peek() != Tok::LBracket {
            return Ok(Literal::Scalar(self.int(open)?));
        }
        self.bump();
        if *self.peek() == Tok::LBracket {
            let rows = self.list(open, |p| {
                let o = p.span();
                p.expect(Tok::LBracket)?;
                p.list(o, |q| q.int(o))
            })?;
            Ok(Literal::Matrix(rows))
        } else {
            Ok(Literal::Vector(self.list(open, |p| p.int(open))?))
        }
    }

    /// Comma-separated items after an opening `[`, through the closing `]`.
    fn list<T>(
        &mut self,
        open: Span,
        mut item: impl FnMut(&mut Self) -> Result<T, ParseError>,
    ) -> Result<Vec<T>, ParseError> {
        let mut out = vec![item(self)?];
        loop {
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                    out.push(item(self)?);
                }
                Tok::RBracket => {
                    self.bump();
                    return Ok(out);
                }
                Tok::Eof | Tok::Semi => return Err(ParseError::unterminated(open.line, open.col)),
                _ => return Err(self.unexpected("`,` or `]`")),
            }
        }
    }

    fn binop(&self) -> Option<BinOp> {
        Some(match self.peek() {
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            Tok::Star => BinOp::Mul,
            Tok::Geq => BinOp::Geq,
            Tok::SparseStar => BinOp::SparseMul,
            Tok::HadamardStar => BinOp::HadamardMul,
            _ => return None,
        })
    }

    /// Precedence climbing over left-associative binary operators.
    fn expr(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.primary()?;
        while let Some(op) = self.binop() {
            if op.precedence() <= min_prec {
                break;
            }
            self.bump();
            let rhs = self.expr(op.precedence())?;
            let span = lhs.span.to(rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            };
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr(0)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::LParen => {
                let start = self.span();
                let func = Builtin::lookup(&name).ok_or_else(|| {
                    ParseError::syntax(start.line, start.col, format!("unknown function `{name}`"))
                })?;
                self.bump();
                self.bump();
                let mut args = vec![self.expr(0)?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr(0)?);
                }
                self.expect(Tok::RParen)?;
                if args.len() != func.arity() {
                    return Err(ParseError::syntax(
                        start.line,
                        start.col,
                        format!(
                            "`{name}` takes {} argument(s), got {}",
                            func.arity(),
                            args.len()
                        ),
                    ));
                }
                Ok(Expr {
                    kind: ExprKind::Call { func, args },
                    span: start.to(self.prev_span()),
                })
            }
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok(Expr {
                    kind: ExprKind::Var { name },
                    span,
                })
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}

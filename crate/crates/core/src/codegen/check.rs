//! Lightweight structural checker for the Verilog subset the stencils and
//! the emitter produce.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{Manifest, VerilogDesign};
use crate::templates::{template_ports, PortDir};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "violation")]
pub enum StructuralViolation {
    Syntax {
        line: usize,
        message: String,
    },
    UnbalancedModule {
        line: usize,
        message: String,
    },
    Undeclared {
        module: String,
        name: String,
        line: usize,
    },
    Redeclared {
        module: String,
        name: String,
        line: usize,
    },
    MultipleDrivers {
        module: String,
        signal: String,
        drivers: usize,
    },
    Undriven {
        module: String,
        signal: String,
    },
    DrivenInput {
        module: String,
        signal: String,
    },
    AssignToReg {
        module: String,
        signal: String,
        line: usize,
    },
    RegInSeveralAlways {
        module: String,
        signal: String,
    },
    UnknownModule {
        instance: String,
        module: String,
    },
    DuplicateModule {
        module: String,
    },
    DuplicateInstance {
        module: String,
        instance: String,
    },
    PortMismatch {
        instance: String,
        detail: String,
    },
    ParameterMismatch {
        instance: String,
        param: String,
        expected: u64,
        found: String,
    },
    ManifestMismatch {
        detail: String,
    },
}

impl fmt::Display for StructuralViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StructuralViolation::*;
        match self {
            Syntax { line, message } => write!(f, "line {line}: {message}"),
            UnbalancedModule { line, message } => write!(f, "line {line}: {message}"),
            Undeclared { module, name, line } => write!(
                f,
                "{module}: `{name}` used before declaration (line {line})"
            ),
            Redeclared { module, name, line } => {
                write!(f, "{module}: `{name}` declared twice (line {line})")
            }
            MultipleDrivers {
                module,
                signal,
                drivers,
            } => write!(f, "{module}: `{signal}` has {drivers} drivers"),
            Undriven { module, signal } => write!(f, "{module}: `{signal}` is never driven"),
            DrivenInput { module, signal } => {
                write!(f, "{module}: input `{signal}` is driven inside")
            }
            AssignToReg {
                module,
                signal,
                line,
            } => {
                write!(
                    f,
                    "{module}: continuous assignment to reg `{signal}` (line {line})"
                )
            }
            RegInSeveralAlways { module, signal } => {
                write!(
                    f,
                    "{module}: reg `{signal}` assigned in more than one always block"
                )
            }
            UnknownModule { instance, module } => {
                write!(f, "instance {instance}: unknown module {module}")
            }
            DuplicateModule { module } => write!(f, "module {module} defined twice"),
            DuplicateInstance { module, instance } => {
                write!(f, "{module}: instance name {instance} reused")
            }
            PortMismatch { instance, detail } => write!(f, "instance {instance}: {detail}"),
            ParameterMismatch {
                instance,
                param,
                expected,
                found,
            } => write!(
                f,
                "instance {instance}: {param} is {found}, expected {expected}"
            ),
            ManifestMismatch { detail } => write!(f, "manifest: {detail}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub modules: usize,
    pub instances: usize,
    pub violations: Vec<StructuralViolation>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Sys,
    Num(String),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
}

const SYMBOLS: &[&str] = &[
    ">>>", "<<<", "===", "!==", "<=", ">=", "==", "!=", "&&", "||", "<<", ">>", "+:", "-:", "**",
    "(", ")", "[", "]", "{", "}", ";", ",", ".", "#", "@", "=", "+", "-", "*", "/", "%", "<", ">",
    "!", "~", "&", "|", "^", "?", ":",
];

fn lex(text: &str) -> Result<Vec<Token>, StructuralViolation> {
    let b = text.as_bytes();
    let mut i = 0;
    let mut line = 1;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i];
        if c == b'\n' {
            line += 1;
            i += 1;
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else if text[i..].starts_with("//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if text[i..].starts_with("/*") {
            let end = text[i + 2..]
                .find("*/")
                .ok_or(StructuralViolation::Syntax {
                    line,
                    message: "unterminated comment".into(),
                })?;
            line += text[i..i + 2 + end].matches('\n').count();
            i += end + 4;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'$') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[s..i].to_string()),
                line,
            });
        } else if c == b'$' {
            i += 1;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Sys,
                line,
            });
        } else if c.is_ascii_digit() || c == b'\'' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'_') {
                i += 1;
            }
            if i < b.len() && b[i] == b'\'' {
                i += 1;
                if i < b.len() && (b[i] == b's' || b[i] == b'S') {
                    i += 1;
                }
                if i < b.len() && b"bBoOdDhH".contains(&b[i]) {
                    i += 1;
                } else {
                    return Err(StructuralViolation::Syntax {
                        line,
                        message: "malformed based number".into(),
                    });
                }
                while i < b.len() && (b[i].is_ascii_hexdigit() || b"xXzZ_".contains(&b[i])) {
                    i += 1;
                }
            }
            out.push(Token {
                tok: Tok::Num(text[s..i].to_string()),
                line,
            });
        } else if let Some(sym) = SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            out.push(Token {
                tok: Tok::Sym(sym),
                line,
            });
            i += sym.len();
        } else {
            return Err(StructuralViolation::Syntax {
                line,
                message: format!("unexpected character `{}`", c as char),
            });
        }
    }
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "module",
    "endmodule",
    "input",
    "output",
    "inout",
    "wire",
    "reg",
    "integer",
    "signed",
    "localparam",
    "parameter",
    "assign",
    "always",
    "initial",
    "begin",
    "end",
    "if",
    "else",
    "for",
    "posedge",
    "negedge",
    "or",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SigKind {
    Param,
    Wire,
    Reg,
    Integer,
}

#[derive(Clone, Debug)]
struct Signal {
    kind: SigKind,
    port: Option<PortDir>,
}

#[derive(Clone, Debug)]
struct Instance {
    module: String,
    name: String,
    params: Vec<(String, String)>,
    conns: Vec<(String, Option<String>)>,
    line: usize,
}

#[derive(Clone, Debug, Default)]
struct Module {
    name: String,
    ports: Vec<(String, PortDir)>,
    signals: BTreeMap<String, Signal>,
    instances: Vec<Instance>,
    /// Continuous assignment targets.
    assigns: Vec<(String, usize)>,
    /// Regs assigned per always block.
    always_targets: Vec<BTreeSet<String>>,
}

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    violations: Vec<StructuralViolation>,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&'t Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map(|t| t.line)
            .unwrap_or(0)
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == s)
    }

    fn syntax(&self, message: impl Into<String>) -> StructuralViolation {
        StructuralViolation::Syntax {
            line: self.line(),
            message: message.into(),
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), StructuralViolation> {
        if self.is_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{s}`, found {:?}", self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, StructuralViolation> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                self.pos += 1;
                Ok(s.clone())
            }
            other => Err(self.syntax(format!("expected identifier, found {other:?}"))),
        }
    }

    fn use_ident(&mut self, m: &Module, name: &str, line: usize) {
        if !m.signals.contains_key(name) {
            self.violations.push(StructuralViolation::Undeclared {
                module: m.name.clone(),
                name: name.to_string(),
                line,
            });
        }
    }

    /// Consumes a balanced expression up to (not including) one of `stops`
    /// at depth zero, checking identifier uses. Returns the text.
    fn expr(&mut self, m: &Module, stops: &[&str]) -> Result<String, StructuralViolation> {
        let mut depth = 0i32;
        let mut text = String::new();
        loop {
            let Some(t) = self.toks.get(self.pos) else {
                return Err(self.syntax("unexpected end of input in expression"));
            };
            match &t.tok {
                Tok::Sym(s) if depth == 0 && stops.contains(s) => return Ok(text),
                Tok::Sym(s @ ("(" | "[" | "{")) => {
                    depth += 1;
                    text.push_str(s);
                }
                Tok::Sym(s @ (")" | "]" | "}")) => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(self.syntax(format!("unbalanced `{s}`")));
                    }
                    text.push_str(s);
                }
                Tok::Sym(";") => return Err(self.syntax("unexpected `;` in expression")),
                Tok::Sym(s) => text.push_str(s),
                Tok::Ident(s) => {
                    if KEYWORDS.contains(&s.as_str()) {
                        return Err(self.syntax(format!("keyword `{s}` in expression")));
                    }
                    let line = t.line;
                    self.use_ident(m, s, line);
                    text.push_str(s);
                }
                Tok::Num(s) => text.push_str(s),
                Tok::Sys => {}
            }
            self.pos += 1;
        }
    }

    fn declare(
        &mut self,
        m: &mut Module,
        name: String,
        kind: SigKind,
        port: Option<PortDir>,
        line: usize,
    ) {
        if m.signals.contains_key(&name) {
            self.violations.push(StructuralViolation::Redeclared {
                module: m.name.clone(),
                name,
                line,
            });
            return;
        }
        if let Some(d) = port {
            m.ports.push((name.clone(), d));
        }
        m.signals.insert(name, Signal { kind, port });
    }

    fn skip_range(&mut self, m: &Module) -> Result<(), StructuralViolation> {
        if self.is_sym("[") {
            self.pos += 1;
            self.expr(m, &["]"])?;
            self.expect_sym("]")?;
        }
        Ok(())
    }

    fn module(&mut self) -> Result<Module, StructuralViolation> {
        let mut m = Module {
            name: self.ident()?,
            ..Module::default()
        };
        if self.is_sym("#") {
            self.pos += 1;
            self.expect_sym("(")?;
            while !self.is_sym(")") {
                if !self.is_kw("parameter") {
                    return Err(self.syntax("expected `parameter`"));
                }
                self.pos += 1;
                let line = self.line();
                let name = self.ident()?;
                self.expect_sym("=")?;
                self.expr(&m, &[",", ")"])?;
                self.declare(&mut m, name, SigKind::Param, None, line);
                if self.is_sym(",") {
                    self.pos += 1;
                }
            }
            self.pos += 1;
        }
        self.expect_sym("(")?;
        while !self.is_sym(")") {
            let dir = if self.is_kw("input") {
                PortDir::Input
            } else if self.is_kw("output") {
                PortDir::Output
            } else {
                return Err(self.syntax("expected port direction"));
            };
            self.pos += 1;
            let mut kind = SigKind::Wire;
            if self.is_kw("reg") {
                kind = SigKind::Reg;
                self.pos += 1;
            } else if self.is_kw("wire") {
                self.pos += 1;
            }
            if self.is_kw("signed") {
                self.pos += 1;
            }
            self.skip_range(&m)?;
            let line = self.line();
            let name = self.ident()?;
            self.declare(&mut m, name, kind, Some(dir), line);
            if self.is_sym(",") {
                self.pos += 1;
            } else if !self.is_sym(")") {
                return Err(self.syntax("expected `,` or `)` in port list"));
            }
        }
        self.pos += 1;
        self.expect_sym(";")?;
        loop {
            match self.peek() {
                None => {
                    self.violations.push(StructuralViolation::UnbalancedModule {
                        line: self.line(),
                        message: format!("module {} is never closed", m.name),
                    });
                    return Ok(m);
                }
                Some(Tok::Ident(k)) if k == "endmodule" => {
                    self.pos += 1;
                    return Ok(m);
                }
                Some(Tok::Ident(k)) if k == "module" => {
                    self.violations.push(StructuralViolation::UnbalancedModule {
                        line: self.line(),
                        message: format!("module {} is missing endmodule", m.name),
                    });
                    return Ok(m);
                }
                _ => self.item(&mut m)?,
            }
        }
    }

    fn decl_list(&mut self, m: &mut Module, kind: SigKind) -> Result<(), StructuralViolation> {
        if self.is_kw("signed") {
            self.pos += 1;
        }
        self.skip_range(m)?;
        loop {
            let line = self.line();
            let name = self.ident()?;
            while self.is_sym("[") {
                self.skip_range(m)?;
            }
            if self.is_sym("=") {
                return Err(self.syntax("initializers in declarations are not supported"));
            }
            self.declare(m, name, kind, None, line);
            if self.is_sym(",") {
                self.pos += 1;
                continue;
            }
            return self.expect_sym(";");
        }
    }

    fn item(&mut self, m: &mut Module) -> Result<(), StructuralViolation> {
        let line = self.line();
        let Some(Tok::Ident(word)) = self.peek() else {
            return Err(self.syntax(format!("unexpected {:?} at module level", self.peek())));
        };
        match word.as_str() {
            "localparam" => {
                self.pos += 1;
                let name = self.ident()?;
                self.expect_sym("=")?;
                self.expr(m, &[";"])?;
                self.expect_sym(";")?;
                self.declare(m, name, SigKind::Param, None, line);
            }
            "wire" => {
                self.pos += 1;
                self.decl_list(m, SigKind::Wire)?;
            }
            "reg" => {
                self.pos += 1;
                self.decl_list(m, SigKind::Reg)?;
            }
            "integer" => {
                self.pos += 1;
                self.decl_list(m, SigKind::Integer)?;
            }
            "assign" => {
                self.pos += 1;
                let target = self.ident()?;
                self.use_ident(m, &target, line);
                self.skip_range(m)?;
                self.expect_sym("=")?;
                self.expr(m, &[";"])?;
                self.expect_sym(";")?;
                m.assigns.push((target, line));
            }
            "always" | "initial" => {
                let is_always = word == "always";
                self.pos += 1;
                if is_always {
                    self.expect_sym("@")?;
                    self.expect_sym("(")?;
                    if self.is_sym("*") {
                        self.pos += 1;
                    } else {
                        loop {
                            if self.is_kw("posedge") || self.is_kw("negedge") {
                                self.pos += 1;
                            }
                            let l = self.line();
                            let s = self.ident()?;
                            self.use_ident(m, &s, l);
                            if self.is_kw("or") || self.is_sym(",") {
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect_sym(")")?;
                }
                let targets = self.block(m)?;
                if is_always {
                    m.always_targets.push(targets);
                }
            }
            "module" | "endmodule" => unreachable!("handled by the module loop"),
            _ => {
                let inst = self.instance(m)?;
                m.instances.push(inst);
            }
        }
        Ok(())
    }

    /// A `begin ... end` block; returns assignment targets.
    fn block(&mut self, m: &Module) -> Result<BTreeSet<String>, StructuralViolation> {
        if !self.is_kw("begin") {
            return Err(self.syntax("procedural blocks must start with `begin`"));
        }
        let mut depth = 0usize;
        let mut paren = 0i32;
        let mut targets = BTreeSet::new();
        loop {
            let Some(t) = self.toks.get(self.pos) else {
                return Err(self.syntax("unterminated block"));
            };
            match &t.tok {
                Tok::Ident(k) if k == "begin" => depth += 1,
                Tok::Ident(k) if k == "end" => {
                    depth -= 1;
                    if depth == 0 {
                        self.pos += 1;
                        return Ok(targets);
                    }
                }
                Tok::Ident(k) if k == "module" || k == "endmodule" => {
                    return Err(self.syntax(format!("`{k}` inside a procedural block")));
                }
                Tok::Ident(k) if KEYWORDS.contains(&k.as_str()) => {}
                Tok::Ident(name) => {
                    self.use_ident(m, name, t.line);
                    let prev_ok = self.pos > 0
                        && match &self.toks[self.pos - 1].tok {
                            Tok::Ident(p) => p == "begin" || p == "else",
                            Tok::Sym(p) => matches!(*p, ";" | ")" | ":"),
                            _ => false,
                        };
                    if paren == 0 && prev_ok {
                        let mut k = self.pos + 1;
                        if matches!(self.toks.get(k).map(|t| &t.tok), Some(Tok::Sym("["))) {
                            let mut d = 0;
                            while let Some(t) = self.toks.get(k) {
                                match t.tok {
                                    Tok::Sym("[") => d += 1,
                                    Tok::Sym("]") => {
                                        d -= 1;
                                        if d == 0 {
                                            k += 1;
                                            break;
                                        }
                                    }
                                    _ => {}
                                }
                                k += 1;
                            }
                        }
                        if matches!(self.toks.get(k).map(|t| &t.tok), Some(Tok::Sym("=" | "<="))) {
                            targets.insert(name.clone());
                        }
                    }
                }
                Tok::Sym("(") => paren += 1,
                Tok::Sym(")") => paren -= 1,
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn instance(&mut self, m: &Module) -> Result<Instance, StructuralViolation> {
        let line = self.line();
        let module = self.ident()?;
        let mut params = Vec::new();
        if self.is_sym("#") {
            self.pos += 1;
            self.expect_sym("(")?;
            while !self.is_sym(")") {
                self.expect_sym(".")?;
                let p = self.ident()?;
                self.expect_sym("(")?;
                let v = self.expr(m, &[")"])?;
                self.expect_sym(")")?;
                params.push((p, v));
                if self.is_sym(",") {
                    self.pos += 1;
                }
            }
            self.pos += 1;
        }
        let name = self.ident()?;
        self.expect_sym("(")?;
        let mut conns = Vec::new();
        while !self.is_sym(")") {
            self.expect_sym(".")?;
            let p = self.ident()?;
            self.expect_sym("(")?;
            let base = match (self.peek(), self.peek_at(1)) {
                (Some(Tok::Ident(s)), Some(Tok::Sym(")" | "["))) => Some(s.clone()),
                _ => None,
            };
            let text = self.expr(m, &[")"])?;
            self.expect_sym(")")?;
            conns.push((p, if text.is_empty() { None } else { base }));
            if self.is_sym(",") {
                self.pos += 1;
            } else if !self.is_sym(")") {
                return Err(self.syntax("expected `,` or `)` in port connections"));
            }
        }
        self.pos += 1;
        self.expect_sym(";")?;
        Ok(Instance {
            module,
            name,
            params,
            conns,
            line,
        })
    }
}

fn parse(text: &str) -> (Vec<Module>, Vec<StructuralViolation>) {
    let toks = match lex(text) {
        Ok(t) => t,
        Err(v) => return (vec![], vec![v]),
    };
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        violations: vec![],
    };
    let mut modules = Vec::new();
    while p.pos < toks.len() {
        if p.is_kw("module") {
            p.pos += 1;
            match p.module() {
                Ok(m) => modules.push(m),
                Err(v) => {
                    p.violations.push(v);
                    // Resynchronize at the next module header.
                    while p.pos < toks.len() && !p.is_kw("module") {
                        p.pos += 1;
                    }
                }
            }
        } else if p.is_kw("endmodule") {
            p.violations.push(StructuralViolation::UnbalancedModule {
                line: p.line(),
                message: "endmodule without module".into(),
            });
            p.pos += 1;
        } else {
            let v = p.syntax("expected `module`");
            p.violations.push(v);
            while p.pos < toks.len() && !p.is_kw("module") {
                p.pos += 1;
            }
        }
    }
    (modules, p.violations)
}

fn check_drivers(m: &Module, defs: &BTreeMap<String, &Module>, out: &mut Vec<StructuralViolation>) {
    let mut drivers: BTreeMap<&str, usize> = BTreeMap::new();
    for (t, line) in &m.assigns {
        match m.signals.get(t).map(|s| s.kind) {
            Some(SigKind::Reg) | Some(SigKind::Integer) => {
                out.push(StructuralViolation::AssignToReg {
                    module: m.name.clone(),
                    signal: t.clone(),
                    line: *line,
                })
            }
            _ => *drivers.entry(t).or_default() += 1,
        }
    }
    for inst in &m.instances {
        let Some(def) = defs.get(&inst.module) else {
            continue;
        };
        for (port, sig) in &inst.conns {
            let Some(sig) = sig else { continue };
            if def
                .ports
                .iter()
                .any(|(p, d)| p == port && *d == PortDir::Output)
            {
                *drivers.entry(sig.as_str()).or_default() += 1;
            }
        }
    }
    for (name, s) in &m.signals {
        if s.kind != SigKind::Wire {
            continue;
        }
        let n = drivers.get(name.as_str()).copied().unwrap_or(0);
        match s.port {
            Some(PortDir::Input) if n > 0 => out.push(StructuralViolation::DrivenInput {
                module: m.name.clone(),
                signal: name.clone(),
            }),
            Some(PortDir::Input) => {}
            _ if n == 0 => out.push(StructuralViolation::Undriven {
                module: m.name.clone(),
                signal: name.clone(),
            }),
            _ if n > 1 => out.push(StructuralViolation::MultipleDrivers {
                module: m.name.clone(),
                signal: name.clone(),
                drivers: n,
            }),
            _ => {}
        }
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &m.always_targets {
        for r in t {
            if m.signals.get(r).map(|s| s.kind) == Some(SigKind::Reg) {
                *seen.entry(r).or_default() += 1;
            }
        }
    }
    for (r, n) in seen {
        if n > 1 {
            out.push(StructuralViolation::RegInSeveralAlways {
                module: m.name.clone(),
                signal: r.to_string(),
            });
        }
    }
}

/// Checks a Verilog text and, when given, its manifest.
pub fn structural_check_text(text: &str, manifest: Option<&Manifest>) -> CheckReport {
    let (modules, mut violations) = parse(text);
    let mut defs: BTreeMap<String, &Module> = BTreeMap::new();
    for m in &modules {
        if defs.insert(m.name.clone(), m).is_some() {
            violations.push(StructuralViolation::DuplicateModule {
                module: m.name.clone(),
            });
        }
    }
    let mut instances: BTreeMap<&str, &Instance> = BTreeMap::new();
    for m in &modules {
        check_drivers(m, &defs, &mut violations);
        let mut names = BTreeSet::new();
        for inst in &m.instances {
            if !names.insert(inst.name.as_str()) {
                violations.push(StructuralViolation::DuplicateInstance {
                    module: m.name.clone(),
                    instance: inst.name.clone(),
                });
            }
            instances.insert(&inst.name, inst);
            let Some(def) = defs.get(&inst.module) else {
                violations.push(StructuralViolation::UnknownModule {
                    instance: inst.name.clone(),
                    module: inst.module.clone(),
                });
                continue;
            };
            let want: BTreeSet<&str> = def.ports.iter().map(|(p, _)| p.as_str()).collect();
            let got: Vec<&str> = inst.conns.iter().map(|(p, _)| p.as_str()).collect();
            let got_set: BTreeSet<&str> = got.iter().copied().collect();
            if got.len() != want.len() || got_set != want {
                violations.push(StructuralViolation::PortMismatch {
                    instance: inst.name.clone(),
                    detail: format!(
                        "connects {} port(s) {:?}, module {} has {:?} (line {})",
                        got.len(),
                        got_set.symmetric_difference(&want).collect::<Vec<_>>(),
                        def.name,
                        want.len(),
                        inst.line
                    ),
                });
            }
            for (p, _) in &inst.params {
                if def.signals.get(p).map(|s| s.kind) != Some(SigKind::Param) {
                    violations.push(StructuralViolation::PortMismatch {
                        instance: inst.name.clone(),
                        detail: format!("module {} has no parameter {p}", def.name),
                    });
                }
            }
        }
    }
    if let Some(man) = manifest {
        check_manifest(man, &instances, &mut violations);
    }
    CheckReport {
        modules: modules.len(),
        instances: instances.len(),
        violations,
    }
}

fn param_of<'a>(inst: &'a Instance, name: &str) -> Option<&'a str> {
    inst.params
        .iter()
        .find(|(p, _)| p == name)
        .map(|(_, v)| v.as_str())
}

fn check_manifest(
    man: &Manifest,
    instances: &BTreeMap<&str, &Instance>,
    out: &mut Vec<StructuralViolation>,
) {
    let expect = |out: &mut Vec<StructuralViolation>, inst: &Instance, param: &str, value: u64| {
        let found = param_of(inst, param).unwrap_or("<unbound>");
        if found.parse::<u64>().ok() != Some(value) {
            out.push(StructuralViolation::ParameterMismatch {
                instance: inst.name.clone(),
                param: param.into(),
                expected: value,
                found: found.into(),
            });
        }
    };
    let mut missing = Vec::new();
    for n in &man.nodes {
        let Some(inst) = instances.get(n.instance.as_str()) else {
            missing.push(format!("node {} has no instance {}", n.id, n.instance));
            continue;
        };
        if inst.module != n.module {
            missing.push(format!(
                "instance {} is a {}, manifest says {}",
                n.instance, inst.module, n.module
            ));
        }
        expect(out, inst, "PF", n.pf as u64);
        for (p, &v) in &n.params {
            if p != "PF" {
                expect(out, inst, p, v);
            }
        }
        if !n.kind.is_boundary() {
            let ports = template_ports(n.kind);
            let want: Vec<&str> = ports.iter().map(|p| p.name.as_str()).collect();
            let got: Vec<&str> = inst.conns.iter().map(|(p, _)| p.as_str()).collect();
            if want != got {
                out.push(StructuralViolation::PortMismatch {
                    instance: inst.name.clone(),
                    detail: format!(
                        "ports {got:?} differ from the {} descriptor {want:?}",
                        n.kind
                    ),
                });
            }
        }
    }
    for b in &man.buffers {
        match instances.get(b.instance.as_str()) {
            Some(inst) => expect(out, inst, "BANKS", b.banks as u64),
            None => missing.push(format!("edge {} has no buffer {}", b.edge, b.instance)),
        }
    }
    for detail in missing {
        out.push(StructuralViolation::ManifestMismatch { detail });
    }
}

/// Checks an emitted design against its own manifest.
pub fn structural_check(design: &VerilogDesign) -> CheckReport {
    structural_check_text(&design.text(), Some(&design.manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    const OK: &str =
        "module a #(parameter N = 1) (input clk, input [N-1:0] x, output y, output reg z);
  wire t;
  assign t = x[0];
  assign y = ~t;
  always @(posedge clk) begin
    if (t) z <= 1'b1; else z <= {N{1'b0}};
  end
endmodule
module b (input clk, input x, output y);
  wire q;
  wire r;
  a #(.N(1)) u (.clk(clk), .x(x), .y(q), .z(r));
  assign y = q & r;
endmodule
";

    fn kinds(r: &CheckReport) -> Vec<String> {
        r.violations.iter().map(|v| format!("{v:?}")).collect()
    }

    #[test]
    fn clean_text_passes() {
        let r = structural_check_text(OK, None);
        assert!(r.ok(), "{:?}", kinds(&r));
        assert_eq!((r.modules, r.instances), (2, 1));
    }

    #[test]
    fn dropped_endmodule_is_one_violation() {
        let bad = OK.replacen("endmodule\nmodule b", "module b", 1);
        let r = structural_check_text(&bad, None);
        assert_eq!(r.violations.len(), 1, "{:?}", kinds(&r));
        assert!(matches!(
            r.violations[0],
            StructuralViolation::UnbalancedModule { .. }
        ));
        let r = structural_check_text(OK.trim_end().trim_end_matches("endmodule"), None);
        assert_eq!(r.violations.len(), 1, "{:?}", kinds(&r));
    }

    #[test]
    fn driver_rules() {
        let two = OK.replace("assign y = q & r;", "assign y = q & r;\n  assign q = 1'b0;");
        let r = structural_check_text(&two, None);
        assert!(matches!(
            r.violations[..],
            [StructuralViolation::MultipleDrivers { .. }]
        ));
        let none = OK.replace("  assign t = x[0];\n", "");
        let r = structural_check_text(&none, None);
        assert!(matches!(
            r.violations[..],
            [StructuralViolation::Undriven { .. }]
        ));
        let reg = OK.replace("  assign y = ~t;", "  assign y = ~t;\n  assign z = t;");
        let r = structural_check_text(&reg, None);
        assert!(matches!(
            r.violations[..],
            [StructuralViolation::AssignToReg { .. }]
        ));
        let twice = OK.replace(
            "  end\nendmodule\nmodule b",
            "  end\n  always @(posedge clk) begin\n    z <= 1'b0;\n  end\nendmodule\nmodule b",
        );
        let r = structural_check_text(&twice, None);
        assert!(matches!(
            r.violations[..],
            [StructuralViolation::RegInSeveralAlways { .. }]
        ));
    }

    #[test]
    fn declaration_and_ports() {
        let undeclared = OK.replace("assign y = q & r;", "assign y = q & s;");
        let r = structural_check_text(&undeclared, None);
        assert!(matches!(
            r.violations[..],
            [StructuralViolation::Undeclared { .. }]
        ));
        let arity = OK.replace(", .z(r));", ");");
        let r = structural_check_text(&arity, None);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, StructuralViolation::PortMismatch { .. })));
    }
}

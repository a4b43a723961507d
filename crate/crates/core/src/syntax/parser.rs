use std::collections::{BTreeMap, BTreeSet};

use super::lexer::{lex, Tok, Token};
use super::ParseError;
use crate::ir::{
    binding_shapes, substitute, BinOp, Binding, Combine, CopyPat, Expr, FlatMapPat, GroupByFoldPat, GroupGen, Input,
    Lit, MapPat, MultiFoldPat, Name, Program, ReuseTag, SizeClass, SliceIndex, SlicePat, Type, UnOp, Update,
};

type PResult<T> = Result<T, ParseError>;

/// Body-level item: an expression, an accumulator update, or a tuple that
/// mixes both.
#[derive(Clone, Debug)]
enum Item {
    Expr(Expr),
    Update(UpdSyn),
    Tuple(Vec<Item>),
}

#[derive(Clone, Debug)]
struct UpdSyn {
    loc: Vec<Expr>,
    slice: Option<Vec<Expr>>,
    acc: Name,
    body: Expr,
}

impl UpdSyn {
    fn into_update(self) -> Update {
        Update { loc: self.loc, slice: self.slice, acc: self.acc, body: self.body }
    }
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    used: BTreeSet<Name>,
    shapes: BTreeMap<Name, Vec<Expr>>,
}

pub fn parse(src: &str) -> PResult<Program> {
    let toks = lex(src)?;
    let used = toks
        .iter()
        .filter_map(|t| match &t.tok {
            Tok::Ident(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    let mut p = Parser { toks, pos: 0, used, shapes: BTreeMap::new() };
    p.program()
}

/// Parse a standalone expression (no declarations).
pub fn parse_expr(src: &str) -> PResult<Expr> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, used: BTreeSet::new(), shapes: BTreeMap::new() };
    p.skip_nl();
    let e = p.expr()?;
    p.skip_nl();
    p.expect_eof()?;
    Ok(e)
}

fn loc_list(e: Expr) -> Vec<Expr> {
    match e {
        Expr::Tuple(es) => es,
        e => vec![e],
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(ParseError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> PResult<()> {
        if self.eat(s) {
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_eof(&self) -> PResult<()> {
        match self.peek() {
            Tok::Eof => Ok(()),
            t => self.error(format!("unexpected {}", describe(t))),
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.error(format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn skip_nl(&mut self) {
        while matches!(self.peek(), Tok::Newline) || self.is_sym(";") {
            self.bump();
        }
    }

    fn fresh(&mut self, base: &str) -> Name {
        let mut k = 0;
        loop {
            let c = if k == 0 { base.to_string() } else { format!("{base}{k}") };
            if self.used.insert(c.clone()) {
                return c;
            }
            k += 1;
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut p = Program::default();
        loop {
            self.skip_nl();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(k) if k == "input" => {
                    self.bump();
                    let name = self.ident()?;
                    self.expect(":")?;
                    let elem = match self.ident()?.as_str() {
                        "Float" => Type::Float,
                        "Int" => Type::Int,
                        "Bool" => Type::Bool,
                        other => return self.error(format!("unknown element type `{other}`")),
                    };
                    self.expect("[")?;
                    let mut shape = Vec::new();
                    if !self.is_sym("]") {
                        shape = self.expr_list()?;
                    }
                    self.expect("]")?;
                    let class = if self.is_ident("static") {
                        self.bump();
                        SizeClass::Static
                    } else if self.is_ident("dynamic") {
                        self.bump();
                        SizeClass::Dynamic
                    } else {
                        SizeClass::Dynamic
                    };
                    self.shapes.insert(name.clone(), shape.clone());
                    p.inputs.push(Input { name, elem, shape, class });
                }
                Tok::Ident(k) if k == "static" => {
                    self.bump();
                    p.static_sizes.extend(self.ident_list()?);
                }
                Tok::Ident(k) if k == "output" => {
                    self.bump();
                    p.outputs.extend(self.ident_list()?);
                }
                Tok::Sym("(") => {
                    self.bump();
                    let names = self.ident_list()?;
                    self.expect(")")?;
                    self.expect("=")?;
                    let value = self.expr()?;
                    p.bindings.push(Binding { names, value });
                    self.shapes = binding_shapes(&p);
                }
                Tok::Ident(_) if matches!(self.peek_at(1), Tok::Sym("=")) => {
                    let name = self.ident()?;
                    self.expect("=")?;
                    let value = self.expr()?;
                    p.bindings.push(Binding { names: vec![name], value });
                    self.shapes = binding_shapes(&p);
                }
                t => return self.error(format!("expected a declaration or binding, found {}", describe(&t))),
            }
            if !matches!(self.peek(), Tok::Newline | Tok::Eof) && !self.is_sym(";") {
                return self.error(format!("expected end of statement, found {}", describe(self.peek())));
            }
        }
        if p.bindings.is_empty() && p.inputs.is_empty() {
            return Err(ParseError::EmptyProgram);
        }
        Ok(p)
    }

    fn ident_list(&mut self) -> PResult<Vec<Name>> {
        let mut out = vec![self.ident()?];
        while self.eat(",") {
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn expr_list(&mut self) -> PResult<Vec<Expr>> {
        let mut out = vec![self.expr()?];
        while self.eat(",") {
            out.push(self.expr()?);
        }
        Ok(out)
    }

    /// `(e1, ..., en)`
    fn paren_list(&mut self) -> PResult<Vec<Expr>> {
        self.expect("(")?;
        if self.eat(")") {
            return Ok(Vec::new());
        }
        let out = self.expr_list()?;
        self.expect(")")?;
        Ok(out)
    }

    /// A shape component: `()` is rank 0, `(a, b)` a multi-dimensional
    /// extent, anything else a single extent.
    fn shape_comp(&mut self) -> PResult<Vec<Expr>> {
        if self.is_sym("(") && matches!(self.peek_at(1), Tok::Sym(")")) {
            self.bump();
            self.bump();
            return Ok(Vec::new());
        }
        Ok(loc_list(self.expr()?))
    }

    fn shape_comps(&mut self) -> PResult<Vec<Vec<Expr>>> {
        self.expect("(")?;
        let mut out = vec![self.shape_comp()?];
        while self.eat(",") {
            out.push(self.shape_comp()?);
        }
        self.expect(")")?;
        Ok(out)
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let (op, prec) = match self.peek() {
                Tok::Sym("||") => (BinOp::Or, 1),
                Tok::Sym("&&") => (BinOp::And, 2),
                Tok::Sym("==") => (BinOp::Eq, 3),
                Tok::Sym("!=") => (BinOp::Ne, 3),
                Tok::Sym("<") => (BinOp::Lt, 3),
                Tok::Sym("<=") => (BinOp::Le, 3),
                Tok::Sym(">") => (BinOp::Gt, 3),
                Tok::Sym(">=") => (BinOp::Ge, 3),
                Tok::Sym("+") => (BinOp::Add, 4),
                Tok::Sym("-") => (BinOp::Sub, 4),
                Tok::Sym("*") => (BinOp::Mul, 5),
                Tok::Sym("/") => (BinOp::Div, 5),
                Tok::Sym("%") => (BinOp::Rem, 5),
                _ => return Ok(lhs),
            };
            if prec < min_prec {
                return Ok(lhs);
            }
            self.bump();
            while matches!(self.peek(), Tok::Newline) {
                self.bump();
            }
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat("-") {
            match self.peek().clone() {
                Tok::Int(v) => {
                    self.bump();
                    return self.postfix(Expr::int(-v));
                }
                Tok::Float(v) => {
                    self.bump();
                    return self.postfix(Expr::float(-v));
                }
                Tok::Ident(s) if s == "inf" => {
                    self.bump();
                    return self.postfix(Expr::float(f64::NEG_INFINITY));
                }
                _ => {}
            }
            let e = self.unary()?;
            return Ok(Expr::Unary(UnOp::Neg, Box::new(e)));
        }
        if self.eat("!") {
            let e = self.unary()?;
            return Ok(Expr::Unary(UnOp::Not, Box::new(e)));
        }
        let p = self.primary()?;
        self.postfix(p)
    }

    fn postfix(&mut self, mut e: Expr) -> PResult<Expr> {
        loop {
            if self.is_sym("(") {
                let idx = self.paren_list()?;
                e = Expr::read(e, idx);
            } else if self.is_sym(".") {
                self.bump();
                let m = self.ident()?;
                if let Some(k) = m.strip_prefix('_').and_then(|d| d.parse::<usize>().ok()) {
                    if k == 0 {
                        return self.error("tuple components are numbered from 1");
                    }
                    e = Expr::Proj(Box::new(e), k - 1);
                    continue;
                }
                e = match m.as_str() {
                    "slice" => self.slice_rest(e)?,
                    "copy" => self.copy_rest(e)?,
                    "map" => self.method_map(e)?,
                    other => return self.error(format!("unknown method `{other}`")),
                };
            } else {
                return Ok(e);
            }
        }
    }

    fn slice_rest(&mut self, src: Expr) -> PResult<Expr> {
        self.expect("(")?;
        let mut index = Vec::new();
        loop {
            if self.eat("*") {
                index.push(SliceIndex::Free);
            } else {
                index.push(SliceIndex::Fixed(self.expr()?));
            }
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        Ok(Expr::Slice(Box::new(SlicePat { src, index })))
    }

    fn copy_rest(&mut self, src: Expr) -> PResult<Expr> {
        let src = match src {
            Expr::Var(n) => n,
            _ => return self.error("copy source must be a named array"),
        };
        let offsets = self.paren_list()?;
        let shape = self.paren_list()?;
        let mut reuse = None;
        if self.is_sym(".") && matches!(self.peek_at(1), Tok::Ident(s) if s == "reuse") {
            self.bump();
            self.bump();
            let args = self.paren_list()?;
            let lit = |e: &Expr| match e {
                Expr::Lit(Lit::Int(v)) if *v >= 0 => Some(*v as u32),
                _ => None,
            };
            match args.as_slice() {
                [f, w] => match (lit(f), lit(w)) {
                    (Some(factor), Some(overlap)) => reuse = Some(ReuseTag { factor, overlap }),
                    _ => return self.error("reuse takes two integer literals"),
                },
                _ => return self.error("reuse takes two integer literals"),
            }
        }
        Ok(Expr::Copy(Box::new(CopyPat { src, offsets, shape, reuse })))
    }

    /// `x.map{ e => body }`: a map over the shape of `x` whose element is
    /// substituted for `e`.
    fn method_map(&mut self, recv: Expr) -> PResult<Expr> {
        let name = match &recv {
            Expr::Var(n) => n.clone(),
            _ => return self.error("map receiver must be a named array"),
        };
        let shape = match self.shapes.get(&name) {
            Some(s) if !s.is_empty() => s.clone(),
            _ => return self.error(format!("shape of `{name}` is not known here")),
        };
        self.expect("{")?;
        self.skip_nl();
        let e = self.ident()?;
        self.expect("=>")?;
        let body = self.block_expr()?;
        self.expect("}")?;
        let idx: Vec<Name> = (0..shape.len()).map(|k| self.fresh(["i", "j", "k"].get(k).unwrap_or(&"i"))).collect();
        let elem = if shape.len() == 1 {
            Expr::read(recv, vec![Expr::var(&idx[0])])
        } else {
            let mut index = vec![SliceIndex::Fixed(Expr::var(&idx[0]))];
            index.extend((1..shape.len()).map(|_| SliceIndex::Free));
            Expr::Slice(Box::new(SlicePat { src: recv, index }))
        };
        let (dims, idx) = if shape.len() == 1 { (shape, idx) } else { (vec![shape[0].clone()], vec![idx[0].clone()]) };
        Ok(Expr::Map(Box::new(MapPat { dims, idx, body: substitute(body, &e, &elem) })))
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::float(v))
            }
            Tok::Sym("(") => {
                self.bump();
                if self.eat(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let es = self.expr_list()?;
                self.expect(")")?;
                Ok(if es.len() == 1 { es.into_iter().next().unwrap() } else { Expr::Tuple(es) })
            }
            Tok::Sym("[") => {
                self.bump();
                let mut es = Vec::new();
                if !self.is_sym("]") {
                    es = self.expr_list()?;
                }
                self.expect("]")?;
                Ok(Expr::ArrayLit(es))
            }
            Tok::Sym("{") => {
                self.bump();
                self.skip_nl();
                let e = self.block_expr()?;
                self.expect("}")?;
                Ok(e)
            }
            Tok::Ident(s) => self.ident_primary(&s),
            t => self.error(format!("expected an expression, found {}", describe(&t))),
        }
    }

    fn ident_primary(&mut self, s: &str) -> PResult<Expr> {
        let call = matches!(self.peek_at(1), Tok::Sym("("));
        match s {
            "true" | "false" => {
                self.bump();
                Ok(Expr::Lit(Lit::Bool(s == "true")))
            }
            "inf" => {
                self.bump();
                Ok(Expr::float(f64::INFINITY))
            }
            "if" => {
                self.bump();
                self.expect("(")?;
                let c = self.expr()?;
                self.expect(")")?;
                self.skip_newlines();
                let t = self.expr()?;
                self.skip_newlines();
                if !self.is_ident("else") {
                    return self.error("expected `else`");
                }
                self.bump();
                self.skip_newlines();
                let f = self.expr()?;
                Ok(Expr::If(Box::new(c), Box::new(t), Box::new(f)))
            }
            "map" if call => self.map_pattern(),
            "multiFold" if call => self.multifold(false),
            "fold" if call => self.multifold(true),
            "flatMap" if call => self.flatmap(),
            "groupByFold" if call => self.groupbyfold(),
            "zeros" if call => {
                self.bump();
                let comps = self.shape_comps()?;
                let mut fills: Vec<Expr> =
                    comps.into_iter().map(|c| Expr::Fill(c, Box::new(Expr::float(0.0)))).collect();
                Ok(if fills.len() == 1 { fills.pop().unwrap() } else { Expr::Tuple(fills) })
            }
            "fill" if call => {
                self.bump();
                self.expect("(")?;
                let shape = self.shape_comp()?;
                self.expect(",")?;
                let v = self.expr()?;
                self.expect(")")?;
                Ok(Expr::Fill(shape, Box::new(v)))
            }
            "min" | "max" | "cdiv" if call => {
                self.bump();
                let args = self.paren_list()?;
                let op = match s {
                    "min" => BinOp::Min,
                    "max" => BinOp::Max,
                    _ => BinOp::CeilDiv,
                };
                match <[Expr; 2]>::try_from(args) {
                    Ok([a, b]) => Ok(Expr::bin(op, a, b)),
                    Err(_) => self.error(format!("`{s}` takes two arguments")),
                }
            }
            "sqrt" | "abs" | "float" | "int" | "len" | "square" if call => {
                self.bump();
                let args = self.paren_list()?;
                let a = match <[Expr; 1]>::try_from(args) {
                    Ok([a]) => a,
                    Err(_) => return self.error(format!("`{s}` takes one argument")),
                };
                Ok(match s {
                    "sqrt" => Expr::Unary(UnOp::Sqrt, Box::new(a)),
                    "abs" => Expr::Unary(UnOp::Abs, Box::new(a)),
                    "float" => Expr::Unary(UnOp::ToFloat, Box::new(a)),
                    "int" => Expr::Unary(UnOp::ToInt, Box::new(a)),
                    "len" => Expr::Len(Box::new(a)),
                    _ => Expr::bin(BinOp::Mul, a.clone(), a),
                })
            }
            _ => {
                self.bump();
                Ok(Expr::var(s))
            }
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    /// `i =>` or `(i, j) =>`
    fn binders(&mut self) -> PResult<Vec<Name>> {
        let names = if self.eat("(") {
            if self.eat(")") {
                self.expect("=>")?;
                return Ok(Vec::new());
            }
            let n = self.ident_list()?;
            self.expect(")")?;
            n
        } else {
            vec![self.ident()?]
        };
        self.expect("=>")?;
        Ok(names)
    }

    /// Statements `x = e` followed by a final item, up to (not including) `}`.
    fn block_items(&mut self) -> PResult<(Vec<(Name, Item)>, Item)> {
        let mut stmts = Vec::new();
        loop {
            self.skip_nl();
            if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Sym("=")) {
                let n = self.ident()?;
                self.bump();
                let v = self.item()?;
                stmts.push((n, v));
                if !matches!(self.peek(), Tok::Newline) && !self.is_sym(";") {
                    return self.error(format!("expected end of statement, found {}", describe(self.peek())));
                }
                continue;
            }
            let last = self.item()?;
            self.skip_nl();
            return Ok((stmts, last));
        }
    }

    fn block_expr(&mut self) -> PResult<Expr> {
        let (stmts, last) = self.block_items()?;
        let mut lets = Vec::new();
        for (n, v) in stmts {
            match v {
                Item::Expr(e) => lets.push((n, e)),
                _ => return self.error(format!("`{n}` is an accumulator update outside a fold")),
            }
        }
        match last {
            Item::Expr(e) => Ok(Expr::with_lets(lets, e)),
            _ => self.error("accumulator update outside a fold"),
        }
    }

    fn item(&mut self) -> PResult<Item> {
        if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Sym("=>")) {
            let acc = self.ident()?;
            self.bump();
            self.skip_newlines();
            let body = self.expr()?;
            return Ok(Item::Update(UpdSyn { loc: Vec::new(), slice: None, acc, body }));
        }
        if self.is_sym("(") && self.lambda_inside_parens() {
            let save = self.pos;
            if let Ok(u) = self.update_literal() {
                return Ok(Item::Update(u));
            }
            self.pos = save;
            if let Ok(items) = self.item_tuple() {
                if items.iter().any(|i| !matches!(i, Item::Expr(_))) {
                    return Ok(Item::Tuple(items));
                }
            }
            self.pos = save;
        }
        Ok(Item::Expr(self.expr()?))
    }

    fn lambda_inside_parens(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.toks[self.pos..] {
            match t.tok {
                Tok::Sym("(") | Tok::Sym("[") | Tok::Sym("{") => depth += 1,
                Tok::Sym(")") | Tok::Sym("]") | Tok::Sym("}") => {
                    depth -= 1;
                    if depth == 0 {
                        return false;
                    }
                }
                Tok::Sym("=>") => return true,
                Tok::Eof => return false,
                _ => {}
            }
        }
        false
    }

    /// `(loc [slice (s..)], acc => body)`
    fn update_literal(&mut self) -> PResult<UpdSyn> {
        self.expect("(")?;
        let loc = self.shape_comp()?;
        let slice = if self.is_ident("slice") {
            self.bump();
            Some(self.shape_comp_paren()?)
        } else {
            None
        };
        self.expect(",")?;
        let acc = self.ident()?;
        self.expect("=>")?;
        self.skip_newlines();
        let body = self.expr()?;
        self.expect(")")?;
        Ok(UpdSyn { loc, slice, acc, body })
    }

    fn shape_comp_paren(&mut self) -> PResult<Vec<Expr>> {
        self.paren_list()
    }

    fn item_tuple(&mut self) -> PResult<Vec<Item>> {
        self.expect("(")?;
        let mut out = vec![self.item()?];
        while self.eat(",") {
            out.push(self.item()?);
        }
        self.expect(")")?;
        Ok(out)
    }

    fn map_pattern(&mut self) -> PResult<Expr> {
        self.bump();
        let dims = self.paren_list()?;
        self.expect("{")?;
        self.skip_nl();
        let idx = self.binders()?;
        let body = self.block_expr()?;
        self.expect("}")?;
        Ok(Expr::Map(Box::new(MapPat { dims, idx, body })))
    }

    fn flatmap(&mut self) -> PResult<Expr> {
        self.bump();
        let dims = self.paren_list()?;
        self.expect("{")?;
        self.skip_nl();
        let idx = self.binders()?;
        let body = self.block_expr()?;
        self.expect("}")?;
        Ok(Expr::FlatMap(Box::new(FlatMapPat { dims, idx, body })))
    }

    /// Combine lambda `{ (a, b) => body }`, or `(_)` for none. May follow
    /// the body on the next line.
    fn combine(&mut self, optional: bool) -> PResult<Option<Combine>> {
        let save = self.pos;
        self.skip_newlines();
        if optional
            && self.is_sym("(")
            && matches!(self.peek_at(1), Tok::Ident(s) if s == "_")
            && matches!(self.peek_at(2), Tok::Sym(")"))
        {
            self.bump();
            self.bump();
            self.bump();
            return Ok(None);
        }
        if !self.is_sym("{") {
            self.pos = save;
            return self.error("expected a combine function `{ (a, b) => ... }` or `(_)`");
        }
        self.bump();
        self.skip_nl();
        let names = self.binders()?;
        if names.len() != 2 {
            return self.error("a combine function takes two arguments");
        }
        let body = self.block_expr()?;
        self.expect("}")?;
        let mut it = names.into_iter();
        Ok(Some(Combine { lhs: it.next().unwrap(), rhs: it.next().unwrap(), body }))
    }

    fn multifold(&mut self, scalar: bool) -> PResult<Expr> {
        self.bump();
        let dims = self.paren_list()?;
        let ranges = if scalar { vec![Vec::new()] } else { self.shape_comps()? };
        self.expect("(")?;
        let init = self.expr()?;
        self.expect(")")?;
        self.expect("{")?;
        self.skip_nl();
        let idx = self.binders()?;
        let (stmts, last) = self.block_items()?;
        self.expect("}")?;
        let mut lets = Vec::new();
        let mut named: BTreeMap<Name, UpdSyn> = BTreeMap::new();
        for (n, v) in stmts {
            match v {
                Item::Expr(e) => lets.push((n, e)),
                Item::Update(u) => {
                    named.insert(n, u);
                }
                Item::Tuple(_) => return self.error(format!("`{n}` binds a tuple of updates")),
            }
        }
        let resolve = |it: Item, named: &BTreeMap<Name, UpdSyn>| -> Option<UpdSyn> {
            match it {
                Item::Update(u) => Some(u),
                Item::Expr(Expr::Var(n)) => named.get(&n).cloned(),
                _ => None,
            }
        };
        let updates: Option<Vec<UpdSyn>> = if ranges.len() == 1 {
            resolve(last, &named).map(|u| vec![u])
        } else {
            let items = match last {
                Item::Tuple(items) => items,
                Item::Expr(Expr::Tuple(es)) => es.into_iter().map(Item::Expr).collect(),
                _ => Vec::new(),
            };
            if items.len() == ranges.len() {
                items.into_iter().map(|i| resolve(i, &named)).collect()
            } else {
                None
            }
        };
        let updates = match updates {
            Some(u) => u.into_iter().map(UpdSyn::into_update).collect(),
            None => return self.error(format!("fold body must end with {} accumulator update(s)", ranges.len())),
        };
        let combine = self.combine(true)?;
        Ok(Expr::MultiFold(Box::new(MultiFoldPat { dims, idx, ranges, init, lets, updates, combine })))
    }

    fn groupbyfold(&mut self) -> PResult<Expr> {
        self.bump();
        let dims = self.paren_list()?;
        self.expect("(")?;
        let init = self.expr()?;
        self.expect(")")?;
        self.expect("{")?;
        self.skip_nl();
        let idx = self.binders()?;
        let mut lets = Vec::new();
        let mut last = None;
        loop {
            self.skip_nl();
            if self.is_ident("merge") && matches!(self.peek_at(1), Tok::Sym("(")) {
                self.bump();
                self.expect("(")?;
                let e = self.expr()?;
                self.expect(")")?;
                self.skip_nl();
                last = Some(Item::Expr(Expr::Tuple(vec![Expr::var("merge"), e])));
                break;
            }
            if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Sym("=")) {
                let n = self.ident()?;
                self.bump();
                lets.push((n, self.expr()?));
                continue;
            }
            break;
        }
        let last = match last {
            Some(l) => l,
            None => {
                let l = self.item()?;
                self.skip_nl();
                l
            }
        };
        self.expect("}")?;
        let combine = self.combine(false)?.expect("required combine");
        let gen = match last {
            Item::Update(u) if !u.loc.is_empty() && u.slice.is_none() => {
                let key = if u.loc.len() == 1 { u.loc.into_iter().next().unwrap() } else { Expr::Tuple(u.loc) };
                GroupGen::Keyed { key, acc: u.acc, update: u.body }
            }
            Item::Expr(Expr::Tuple(mut es)) if es.len() == 2 && es[0] == Expr::var("merge") => {
                GroupGen::Merge(es.pop().unwrap())
            }
            Item::Expr(e @ Expr::GroupByFold(_)) => GroupGen::Merge(e),
            Item::Expr(Expr::Tuple(es)) if es.len() == 2 => {
                // `(key, value)`: fold the value into the bucket with the
                // combine function.
                let mut it = es.into_iter();
                let (key, value) = (it.next().unwrap(), it.next().unwrap());
                let acc = self.fresh("acc");
                let v = self.fresh("v");
                let body = substitute(combine.body.clone(), &combine.lhs, &Expr::var(&acc));
                let body = substitute(body, &combine.rhs, &Expr::var(&v));
                GroupGen::Keyed { key, acc, update: Expr::let_in(v, value, body) }
            }
            _ => {
                return self.error(
                    "groupByFold body must end with `(key, value)`, `(key, acc => update)` or a nested groupByFold",
                )
            }
        };
        Ok(Expr::GroupByFold(Box::new(GroupByFoldPat { dims, idx, init, lets, gen, combine })))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of input".into(),
    }
}

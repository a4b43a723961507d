use crate::ir::{BinOp, Combine, Expr, GroupGen, Lit, MultiFoldPat, Program, SizeClass, SliceIndex, UnOp, Update};

const PRIMARY: u8 = 8;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for i in &p.inputs {
        let class = match i.class {
            SizeClass::Static => "static",
            SizeClass::Dynamic => "dynamic",
        };
        out += &format!("input {} : {}[{}] {class}\n", i.name, i.elem, list(&i.shape, 0));
    }
    if !p.static_sizes.is_empty() {
        out += &format!("static {}\n", p.static_sizes.join(", "));
    }
    for b in &p.bindings {
        let lhs = if b.names.len() == 1 { b.names[0].clone() } else { format!("({})", b.names.join(", ")) };
        out += &format!("{lhs} = {}\n", expr(&b.value, 0));
    }
    if !p.outputs.is_empty() {
        out += &format!("output {}\n", p.outputs.join(", "));
    }
    out
}

pub fn print_expr(e: &Expr) -> String {
    expr(e, 0)
}

fn pad(ind: usize) -> String {
    "  ".repeat(ind)
}

fn list(es: &[Expr], ind: usize) -> String {
    es.iter().map(|e| expr(e, ind)).collect::<Vec<_>>().join(", ")
}

fn binders(names: &[String]) -> String {
    if names.len() == 1 {
        names[0].clone()
    } else {
        format!("({})", names.join(", "))
    }
}

fn comp(es: &[Expr], ind: usize) -> String {
    if es.len() == 1 {
        expr(&es[0], ind)
    } else {
        format!("({})", list(es, ind))
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) => binop_prec(*op),
        Expr::Unary(UnOp::Neg | UnOp::Not, _) => 6,
        Expr::Lit(Lit::Int(v)) if *v < 0 => 6,
        Expr::Lit(Lit::Float(v)) if v.is_sign_negative() => 6,
        Expr::If(..) => 0,
        _ => PRIMARY,
    }
}

fn binop_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
        BinOp::Add | BinOp::Sub => 4,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 5,
        BinOp::Min | BinOp::Max | BinOp::CeilDiv => PRIMARY,
    }
}

fn at(e: &Expr, min: u8, ind: usize) -> String {
    let s = expr(e, ind);
    if prec(e) < min {
        format!("({s})")
    } else {
        s
    }
}

fn float_lit(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:?}")
}

/// Statements of a lambda body, one per line at `ind`.
fn body(e: &Expr, ind: usize) -> String {
    let (lets, last) = e.peel_lets();
    let mut out = String::new();
    for (n, v) in lets {
        out += &format!("{}{n} = {}\n", pad(ind), expr(v, ind));
    }
    out += &format!("{}{}\n", pad(ind), expr(last, ind));
    out
}

fn lambda(head: &str, names: &[String], e: &Expr, ind: usize) -> String {
    if !matches!(e, Expr::Let(..)) {
        let s = expr(e, ind + 1);
        if !s.contains('\n') && s.len() < 70 {
            return format!("{head}{{ {} => {s} }}", binders(names));
        }
    }
    format!("{head}{{ {} =>\n{}{}}}", binders(names), body(e, ind + 1), pad(ind))
}

fn combine(c: &Option<Combine>, ind: usize) -> String {
    match c {
        None => "(_)".into(),
        Some(c) => lambda("", &[c.lhs.clone(), c.rhs.clone()], &c.body, ind),
    }
}

fn update(u: &Update, scalar: bool, ind: usize) -> String {
    let b = expr(&u.body, ind);
    if scalar && u.loc.is_empty() && u.slice.is_none() {
        return format!("{} => {b}", u.acc);
    }
    let slice = match &u.slice {
        Some(s) => format!(" slice ({})", list(s, ind)),
        None => String::new(),
    };
    let loc = if u.loc.is_empty() { "()".to_string() } else { comp(&u.loc, ind) };
    format!("({loc}{slice}, {} => {b})", u.acc)
}

fn multifold(m: &MultiFoldPat, ind: usize) -> String {
    let scalar_fold = m.ranges.len() == 1 && m.ranges[0].is_empty();
    let head = if scalar_fold {
        format!("fold({})({})", list(&m.dims, ind), expr(&m.init, ind))
    } else {
        let comps: Vec<String> =
            m.ranges.iter().map(|r| if r.is_empty() { "()".to_string() } else { comp(r, ind) }).collect();
        format!("multiFold({})({})({})", list(&m.dims, ind), comps.join(", "), expr(&m.init, ind))
    };
    let inner = ind + 1;
    let mut out = format!("{head}{{ {} =>\n", binders(&m.idx));
    for (n, v) in &m.lets {
        out += &format!("{}{n} = {}\n", pad(inner), expr(v, inner));
    }
    let ups: Vec<String> = m
        .updates
        .iter()
        .zip(m.ranges.iter().map(|r| r.is_empty()).chain(std::iter::repeat(false)))
        .map(|(u, s)| update(u, s, inner))
        .collect();
    let last = if ups.len() == 1 { ups[0].clone() } else { format!("({})", ups.join(", ")) };
    out += &format!("{}{last}\n{}}}{}", pad(inner), pad(ind), combine(&m.combine, ind));
    out
}

fn expr(e: &Expr, ind: usize) -> String {
    match e {
        Expr::Lit(Lit::Int(v)) => v.to_string(),
        Expr::Lit(Lit::Float(v)) => float_lit(*v),
        Expr::Lit(Lit::Bool(b)) => b.to_string(),
        Expr::Var(n) => n.clone(),
        Expr::Read(a, idx) => format!("{}({})", at(a, PRIMARY, ind), list(idx, ind)),
        Expr::Unary(op, a) => match op {
            UnOp::Neg if matches!(a.as_ref(), Expr::Lit(Lit::Int(_) | Lit::Float(_))) => {
                format!("-({})", expr(a, ind))
            }
            UnOp::Neg => format!("-{}", at(a, 6, ind)),
            UnOp::Not => format!("!{}", at(a, 6, ind)),
            UnOp::Sqrt => format!("sqrt({})", expr(a, ind)),
            UnOp::Abs => format!("abs({})", expr(a, ind)),
            UnOp::ToFloat => format!("float({})", expr(a, ind)),
            UnOp::ToInt => format!("int({})", expr(a, ind)),
        },
        Expr::Binary(op, a, b) => {
            let name = match op {
                BinOp::Min => Some("min"),
                BinOp::Max => Some("max"),
                BinOp::CeilDiv => Some("cdiv"),
                _ => None,
            };
            if let Some(n) = name {
                return format!("{n}({}, {})", expr(a, ind), expr(b, ind));
            }
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                BinOp::Rem => "%",
                BinOp::Lt => "<",
                BinOp::Le => "<=",
                BinOp::Gt => ">",
                BinOp::Ge => ">=",
                BinOp::Eq => "==",
                BinOp::Ne => "!=",
                BinOp::And => "&&",
                BinOp::Or => "||",
                _ => unreachable!(),
            };
            let p = binop_prec(*op);
            format!("{} {sym} {}", at(a, p, ind), at(b, p + 1, ind))
        }
        Expr::If(c, t, f) => format!("if ({}) {} else {}", expr(c, ind), at(t, 1, ind), at(f, 1, ind)),
        Expr::Tuple(es) => format!("({})", list(es, ind)),
        Expr::Proj(a, k) => format!("{}._{}", at(a, PRIMARY, ind), k + 1),
        Expr::Let(..) => format!("{{\n{}{}}}", body(e, ind + 1), pad(ind)),
        Expr::ArrayLit(es) => format!("[{}]", list(es, ind)),
        Expr::Len(a) => format!("len({})", expr(a, ind)),
        Expr::Fill(shape, v) => {
            let s = if shape.is_empty() { "()".to_string() } else { comp(shape, ind) };
            format!("fill({s}, {})", expr(v, ind))
        }
        Expr::Map(m) => lambda(&format!("map({})", list(&m.dims, ind)), &m.idx, &m.body, ind),
        Expr::FlatMap(f) => lambda(&format!("flatMap({})", list(&f.dims, ind)), &f.idx, &f.body, ind),
        Expr::MultiFold(m) => multifold(m, ind),
        Expr::GroupByFold(g) => {
            let inner = ind + 1;
            let mut out =
                format!("groupByFold({})({}){{ {} =>\n", list(&g.dims, ind), expr(&g.init, ind), binders(&g.idx));
            for (n, v) in &g.lets {
                out += &format!("{}{n} = {}\n", pad(inner), expr(v, inner));
            }
            let last = match &g.gen {
                GroupGen::Keyed { key, acc, update } => {
                    format!("({}, {acc} => {})", expr(key, inner), expr(update, inner))
                }
                GroupGen::Merge(e) => format!("merge({})", expr(e, inner)),
            };
            let c = Some(g.combine.clone());
            out += &format!("{}{last}\n{}}}{}", pad(inner), pad(ind), combine(&c, ind));
            out
        }
        Expr::Copy(c) => {
            let mut s = format!("{}.copy({})({})", c.src, list(&c.offsets, ind), list(&c.shape, ind));
            if let Some(r) = c.reuse {
                s += &format!(".reuse({}, {})", r.factor, r.overlap);
            }
            s
        }
        Expr::Slice(s) => {
            let idx: Vec<String> = s
                .index
                .iter()
                .map(|i| match i {
                    SliceIndex::Fixed(e) => expr(e, ind),
                    SliceIndex::Free => "*".into(),
                })
                .collect();
            format!("{}.slice({})", at(&s.src, PRIMARY, ind), idx.join(", "))
        }
    }
}

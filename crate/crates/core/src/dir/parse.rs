use std::collections::HashSet;

use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Reg(String),
    Global(String),
    Num(String),
    Punct(char),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Reg(s) => format!("`%{s}`"),
            Tok::Global(s) => format!("`@{s}`"),
            Tok::Num(s) => format!("`{s}`"),
            Tok::Punct(c) => format!("`{c}`"),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(line: &str, lineno: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let take_run = |start: usize| {
            let mut j = start;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            (chars[start..j].iter().collect::<String>(), j)
        };
        match c {
            '%' | '@' => {
                let (name, j) = take_run(i + 1);
                if name.is_empty() {
                    return Err(ParseError {
                        line: lineno,
                        column: col,
                        message: format!("expected a name after `{c}`"),
                    });
                }
                toks.push((if c == '%' { Tok::Reg(name) } else { Tok::Global(name) }, col));
                i = j;
            }
            '-' | '0'..='9' => {
                let start = if c == '-' { i + 1 } else { i };
                let (run, j) = take_run(start);
                if run.is_empty() || !run.starts_with(|d: char| d.is_ascii_digit()) {
                    return Err(ParseError { line: lineno, column: col, message: "malformed number".into() });
                }
                let text = if c == '-' { format!("-{run}") } else { run };
                toks.push((Tok::Num(text), col));
                i = j;
            }
            '(' | ')' | '[' | ']' | '{' | '}' | ',' | ':' | '=' | '!' => {
                toks.push((Tok::Punct(c), col));
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let (name, j) = take_run(i);
                toks.push((Tok::Ident(name), col));
                i = j;
            }
            other => {
                return Err(ParseError {
                    line: lineno,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(toks)
}

/// Cursor over the tokens of one line.
struct Line<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    lineno: usize,
    len: usize,
}

impl<'a> Line<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let column = self.toks.get(self.pos).map_or(self.len + 1, |t| t.1);
        Err(ParseError { line: self.lineno, column, message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.0);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => self.err(format!("unexpected {} at end of line", t.describe())),
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => self.err(format!("expected `{c}`, found {}", t.describe())),
            None => self.err(format!("expected `{c}`")),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => self.err(format!("expected an identifier, found {}", t.describe())),
            None => self.err("expected an identifier"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => self.err(format!("expected `{kw}`, found {}", t.describe())),
            None => self.err(format!("expected `{kw}`")),
        }
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        match self.peek() {
            Some(Tok::Reg(s)) => {
                let r = Reg(s.clone());
                self.pos += 1;
                Ok(r)
            }
            Some(t) => self.err(format!("expected a register, found {}", t.describe())),
            None => self.err("expected a register"),
        }
    }

    fn global(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Global(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => self.err(format!("expected an `@name`, found {}", t.describe())),
            None => self.err("expected an `@name`"),
        }
    }

    fn num_text(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Num(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => self.err(format!("expected a number, found {}", t.describe())),
            None => self.err("expected a number"),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let save = self.pos;
        let s = self.num_text()?;
        s.parse::<i64>().or_else(|_| {
            self.pos = save;
            self.err(format!("invalid 64-bit integer `{s}`"))
        })
    }

    fn uint(&mut self) -> Result<u64, ParseError> {
        let save = self.pos;
        let s = self.num_text()?;
        s.parse::<u64>().or_else(|_| {
            self.pos = save;
            self.err(format!("invalid unsigned integer `{s}`"))
        })
    }

    fn key_uint(&mut self, key: &str) -> Result<u64, ParseError> {
        self.keyword(key)?;
        self.punct('=')?;
        self.uint()
    }

    fn width(&mut self) -> Result<Width, ParseError> {
        let save = self.pos;
        let n = self.int()?;
        Width::from_bytes(n).ok_or_else(|| {
            self.pos = save;
            self.err::<()>(format!("width must be 1, 2, 4, or 8 (got {n})")).unwrap_err()
        })
    }
}

struct BlockBuilder {
    label: String,
    phis: Vec<(Option<InstrId>, Reg, Vec<(Reg, String)>)>,
    body: Vec<(Option<InstrId>, Op, Option<OriginTag>)>,
    term: Option<Terminator>,
}

struct FnBuilder {
    name: String,
    params: Vec<Reg>,
    kind: FunctionKind,
    labels: HashSet<String>,
    blocks: Vec<BlockBuilder>,
}

enum Item {
    Phi(Reg, Vec<(Reg, String)>),
    Instr(Op),
    Term(Terminator),
}

/// Parses DIR source text. Structural problems that need whole-program
/// context (undefined labels or registers) are left to `validate_program`.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut data = Vec::new();
    let mut entry: Option<String> = None;
    let mut fns: Vec<FnBuilder> = Vec::new();
    let mut cur: Option<FnBuilder> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let toks = lex(raw, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut ln = Line { toks: &toks, pos: 0, lineno, len: raw.chars().count() };

        let Some(f) = cur.as_mut() else {
            match ln.peek() {
                Some(Tok::Ident(k)) if k == "data" => {
                    ln.next();
                    data.push(parse_segment(&mut ln)?);
                }
                Some(Tok::Ident(k)) if k == "entry" => {
                    ln.next();
                    if entry.is_some() {
                        return ln.err("duplicate `entry` line");
                    }
                    entry = Some(ln.global()?);
                    ln.expect_end()?;
                }
                Some(Tok::Ident(k)) if k == "func" => {
                    ln.next();
                    cur = Some(parse_func_header(&mut ln)?);
                }
                _ => return ln.err("expected `data`, `entry`, or `func`"),
            }
            continue;
        };

        // Closing brace of the current function.
        if ln.peek() == Some(&Tok::Punct('}')) {
            ln.next();
            ln.expect_end()?;
            if let Some(b) = f.blocks.last() {
                if b.term.is_none() {
                    return ln.err(format!("block `{}` has no terminator", b.label));
                }
            }
            fns.push(cur.take().expect("function open"));
            continue;
        }

        // Block label.
        if let (Some(Tok::Ident(name)), Some((Tok::Punct(':'), _))) = (ln.peek(), toks.get(1)) {
            let name = name.clone();
            ln.next();
            ln.next();
            ln.expect_end()?;
            if let Some(b) = f.blocks.last() {
                if b.term.is_none() {
                    return Err(ParseError {
                        line: lineno,
                        column: 1,
                        message: format!("block `{}` has no terminator", b.label),
                    });
                }
            }
            if !f.labels.insert(name.clone()) {
                return Err(ParseError { line: lineno, column: 1, message: format!("duplicate label `{name}`") });
            }
            f.blocks.push(BlockBuilder { label: name, phis: Vec::new(), body: Vec::new(), term: None });
            continue;
        }

        let Some(block) = f.blocks.last_mut() else {
            return ln.err("instruction outside of a block");
        };
        if block.term.is_some() {
            return ln.err(format!("instruction after the terminator of block `{}`", block.label));
        }

        let id = if ln.eat_punct('[') {
            let save = ln.pos;
            let n = ln.uint()?;
            let n = u32::try_from(n).or_else(|_| {
                ln.pos = save;
                ln.err("instruction id out of range")
            })?;
            ln.punct(']')?;
            Some(InstrId(n))
        } else {
            None
        };

        let item = parse_item(&mut ln)?;
        let origin = if ln.eat_punct('!') {
            ln.keyword("origin")?;
            ln.punct('=')?;
            let save = ln.pos;
            let n = ln.uint()?;
            let n = u32::try_from(n).or_else(|_| {
                ln.pos = save;
                ln.err("origin id out of range")
            })?;
            Some(OriginTag { origin_load_id: InstrId(n) })
        } else {
            None
        };
        ln.expect_end()?;

        match item {
            Item::Phi(dst, incoming) => {
                if origin.is_some() {
                    return ln.err("phis cannot carry an origin tag");
                }
                if !block.body.is_empty() {
                    return Err(ParseError {
                        line: lineno,
                        column: 1,
                        message: "phi after a non-phi instruction".into(),
                    });
                }
                block.phis.push((id, dst, incoming));
            }
            Item::Instr(op) => block.body.push((id, op, origin)),
            Item::Term(t) => {
                if id.is_some() || origin.is_some() {
                    return Err(ParseError {
                        line: lineno,
                        column: 1,
                        message: "terminators take no id or origin tag".into(),
                    });
                }
                block.term = Some(t);
            }
        }
    }

    if let Some(f) = cur {
        return Err(ParseError {
            line: last_line + 1,
            column: 1,
            message: format!("function `@{}` is missing its closing `}}`", f.name),
        });
    }

    // Assign ids to instructions written without one.
    let mut next = fns
        .iter()
        .flat_map(|f| f.blocks.iter())
        .flat_map(|b| b.phis.iter().map(|p| p.0).chain(b.body.iter().map(|i| i.0)))
        .flatten()
        .map(|id| id.0 + 1)
        .max()
        .unwrap_or(0);
    let mut fresh = |id: Option<InstrId>| {
        id.unwrap_or_else(|| {
            let id = InstrId(next);
            next += 1;
            id
        })
    };

    let functions = fns
        .into_iter()
        .map(|f| Function {
            name: f.name,
            params: f.params,
            kind: f.kind,
            blocks: f
                .blocks
                .into_iter()
                .map(|b| Block {
                    label: b.label,
                    phis: b.phis.into_iter().map(|(id, dst, incoming)| Phi { id: fresh(id), dst, incoming }).collect(),
                    body: b
                        .body
                        .into_iter()
                        .map(|(id, op, origin)| Instruction { id: fresh(id), op, origin })
                        .collect(),
                    term: b.term.expect("checked when the block closed"),
                })
                .collect(),
        })
        .collect();

    Ok(Program { functions, data, entry: entry.unwrap_or_else(|| "main".to_string()) })
}

fn parse_segment(ln: &mut Line<'_>) -> Result<DataSegment, ParseError> {
    let key = ln.global()?;
    if key != "base" {
        return ln.err("expected `@base=`");
    }
    ln.punct('=')?;
    let base = ln.uint()?;
    let init = match ln.peek() {
        Some(Tok::Ident(k)) if k == "zero" => SegmentInit::Zero { len: ln.key_uint("zero")? },
        Some(Tok::Ident(k)) if k == "prng" => {
            ln.next();
            ln.punct('(')?;
            let seed = ln.key_uint("seed")?;
            ln.punct(',')?;
            let len = ln.key_uint("len")?;
            ln.punct(')')?;
            SegmentInit::Prng { seed, len }
        }
        Some(Tok::Ident(k)) if k == "bytes" => {
            ln.next();
            ln.punct('=')?;
            let save = ln.pos;
            let text = match ln.next() {
                Some(Tok::Num(s)) | Some(Tok::Ident(s)) => s.clone(),
                _ => {
                    ln.pos = save;
                    return ln.err("expected hex bytes");
                }
            };
            let bytes = hex::decode(&text).or_else(|_| {
                ln.pos = save;
                ln.err(format!("invalid hex bytes `{text}`"))
            })?;
            SegmentInit::Bytes(bytes)
        }
        _ => return ln.err("expected `zero=`, `prng(...)`, or `bytes=`"),
    };
    ln.expect_end()?;
    Ok(DataSegment { base, init })
}

fn parse_func_header(ln: &mut Line<'_>) -> Result<FnBuilder, ParseError> {
    let name = ln.global()?;
    ln.punct('(')?;
    let mut params = Vec::new();
    if !ln.eat_punct(')') {
        loop {
            params.push(ln.reg()?);
            if ln.eat_punct(')') {
                break;
            }
            ln.punct(',')?;
        }
    }
    ln.keyword("kind")?;
    ln.punct('=')?;
    let save = ln.pos;
    let kind = match ln.ident()?.as_str() {
        "original" => FunctionKind::Original,
        "access" => FunctionKind::Access,
        "execute" => FunctionKind::Execute,
        other => {
            ln.pos = save;
            return ln.err(format!("unknown function kind `{other}`"));
        }
    };
    ln.punct('{')?;
    ln.expect_end()?;
    Ok(FnBuilder { name, params, kind, labels: HashSet::new(), blocks: Vec::new() })
}

fn parse_item(ln: &mut Line<'_>) -> Result<Item, ParseError> {
    if let Some(Tok::Reg(_)) = ln.peek() {
        let dst = ln.reg()?;
        ln.punct('=')?;
        let save = ln.pos;
        let opname = ln.ident()?;
        return Ok(match opname.as_str() {
            "phi" => {
                let mut incoming = Vec::new();
                loop {
                    ln.punct('[')?;
                    let v = ln.reg()?;
                    ln.punct(',')?;
                    let l = ln.ident()?;
                    ln.punct(']')?;
                    incoming.push((v, l));
                    if !ln.eat_punct(',') {
                        break;
                    }
                }
                Item::Phi(dst, incoming)
            }
            "const" => Item::Instr(Op::Const { dst, value: ln.int()? }),
            "load" => {
                let base = ln.reg()?;
                ln.punct(',')?;
                let offset = ln.int()?;
                ln.punct(',')?;
                let width = ln.width()?;
                Item::Instr(Op::Load { dst, base, offset, width })
            }
            other => match BinOp::from_mnemonic(other) {
                Some(op) => {
                    let lhs = ln.reg()?;
                    ln.punct(',')?;
                    let rhs = ln.reg()?;
                    Item::Instr(Op::Bin { dst, op, lhs, rhs })
                }
                None => {
                    ln.pos = save;
                    return ln.err(format!("unknown operation `{other}`"));
                }
            },
        });
    }

    let save = ln.pos;
    let opname = ln.ident()?;
    Ok(match opname.as_str() {
        "store" => {
            let base = ln.reg()?;
            ln.punct(',')?;
            let offset = ln.int()?;
            ln.punct(',')?;
            let src = ln.reg()?;
            ln.punct(',')?;
            let width = ln.width()?;
            Item::Instr(Op::Store { base, offset, src, width })
        }
        "prefetch" => {
            let base = ln.reg()?;
            ln.punct(',')?;
            let offset = ln.int()?;
            Item::Instr(Op::Prefetch { base, offset })
        }
        "out" => Item::Instr(Op::Out { src: ln.reg()? }),
        "br" => Item::Term(Terminator::Br(ln.ident()?)),
        "brcond" => {
            let cond = ln.reg()?;
            ln.punct(',')?;
            let on_true = ln.ident()?;
            ln.punct(',')?;
            let on_false = ln.ident()?;
            Item::Term(Terminator::BrCond { cond, on_true, on_false })
        }
        "ret" => {
            if ln.at_end() || ln.peek() == Some(&Tok::Punct('!')) {
                Item::Term(Terminator::Ret(None))
            } else {
                Item::Term(Terminator::Ret(Some(ln.reg()?)))
            }
        }
        other => {
            ln.pos = save;
            return ln.err(format!("unknown instruction `{other}`"));
        }
    })
}

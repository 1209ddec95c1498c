//! Structured mini-language and its executor.
//!
//! ```text
//! SELECT item [, item]* FROM table
//!   [JOIN table ON col = col]
//!   [WHERE pred [AND pred]*]
//!   [GROUP BY col [, col]*]
//!
//! item := * | col | count(*) | agg(col)     agg := count|sum|avg|min|max
//! pred := col (=|!=|<|<=|>|>=) literal | col IN (literal, ...) | col IN literal, ...
//!       | col IN $var_d.c | col IN ($var_d.c)
//! col  := name | table.name
//! ```
//!
//! Aggregates over an empty input yield an empty result set, not a row of
//! zeros or nulls.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use thiserror::Error;

use crate::plan::{scan_var_refs, VarRef};
use crate::schema::ColumnType;
use crate::table::{ResultSet, Row, Table, TableStore};
use crate::value::{SourceRef, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn bare(column: impl Into<String>) -> Self {
        ColumnRef {
            table: None,
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn parse(name: &str) -> Option<AggFunc> {
        match name.to_ascii_lowercase().as_str() {
            "count" => Some(AggFunc::Count),
            "sum" => Some(AggFunc::Sum),
            "avg" | "average" | "mean" => Some(AggFunc::Avg),
            "min" | "minimum" => Some(AggFunc::Min),
            "max" | "maximum" => Some(AggFunc::Max),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Star,
    Column(ColumnRef),
    /// `column: None` is `count(*)`.
    Aggregate {
        func: AggFunc,
        column: Option<ColumnRef>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Cmp {
        column: ColumnRef,
        op: CmpOp,
        value: Value,
    },
    In {
        column: ColumnRef,
        values: Vec<Value>,
    },
    /// `IN $var_d.c`; must be bound to values before execution.
    InVar { column: ColumnRef, var: VarRef },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub table: String,
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredQuery {
    pub select: Vec<SelectItem>,
    pub from: String,
    pub join: Option<Join>,
    pub filters: Vec<Predicate>,
    pub group_by: Vec<ColumnRef>,
}

impl StructuredQuery {
    pub fn select(from: impl Into<String>, select: Vec<SelectItem>) -> Self {
        StructuredQuery {
            select,
            from: from.into(),
            join: None,
            filters: Vec::new(),
            group_by: Vec::new(),
        }
    }

    pub fn filter(mut self, p: Predicate) -> Self {
        self.filters.push(p);
        self
    }

    /// Replaces every `IN $var_d.c` with a literal list using `lookup`.
    pub fn bind_vars(
        &mut self,
        mut lookup: impl FnMut(&VarRef) -> Option<Vec<Value>>,
    ) -> Result<(), QueryError> {
        for p in &mut self.filters {
            if let Predicate::InVar { column, var } = p {
                let values = lookup(var).ok_or_else(|| {
                    QueryError::UnboundVariable(format!(
                        "$var_{}{}",
                        var.target_index,
                        var.column
                            .as_ref()
                            .map(|c| format!(".{c}"))
                            .unwrap_or_default()
                    ))
                })?;
                *p = Predicate::In {
                    column: column.clone(),
                    values,
                };
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error("unbound variable {0}")]
    UnboundVariable(String),
    #[error("syntax error: {0}")]
    Syntax(String),
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Str(String),
    Var(VarRef),
    Sym(&'static str),
}

fn tokenize(src: &str) -> Result<Vec<Tok>, QueryError> {
    let vars: BTreeMap<usize, (usize, VarRef)> = scan_var_refs(src)
        .into_iter()
        .map(|(range, r)| (range.start, (range.end, r)))
        .collect();
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if let Some((end, r)) = vars.get(&i) {
            out.push(Tok::Var(r.clone()));
            i = *end;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Tok::Word(src[start..i].to_string()));
            continue;
        }
        let negative_number = c == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        if c.is_ascii_digit() || negative_number {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            out.push(Tok::Number(src[start..i].to_string()));
            continue;
        }
        if c == b'\'' || c == b'"' {
            let quote = c;
            let mut s = String::new();
            i += 1;
            loop {
                let Some(ch) = src[i..].chars().next() else {
                    return Err(QueryError::Syntax("unterminated string".into()));
                };
                if ch as u32 == u32::from(quote) {
                    // doubled quote escapes itself
                    if bytes.get(i + 1) == Some(&quote) {
                        s.push(ch);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                s.push(ch);
                i += ch.len_utf8();
            }
            out.push(Tok::Str(s));
            continue;
        }
        let two = src.get(i..i + 2).unwrap_or("");
        let sym = match two {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "!=" => Some("!="),
            "<>" => Some("!="),
            _ => None,
        };
        if let Some(s) = sym {
            out.push(Tok::Sym(s));
            i += 2;
            continue;
        }
        let sym = match c {
            b'=' => "=",
            b'<' => "<",
            b'>' => ">",
            b',' => ",",
            b'(' => "(",
            b')' => ")",
            b'*' => "*",
            b'.' => ".",
            b';' => ";",
            _ => {
                return Err(QueryError::Syntax(format!(
                    "unexpected character `{}`",
                    src[i..].chars().next().unwrap_or('?')
                )))
            }
        };
        out.push(Tok::Sym(sym));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(QueryError::Syntax(format!("expected {kw}")))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), QueryError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(QueryError::Syntax(format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        match self.next() {
            Some(Tok::Word(w)) => Ok(w),
            other => Err(QueryError::Syntax(format!(
                "expected identifier, found {other:?}"
            ))),
        }
    }

    fn column(&mut self) -> Result<ColumnRef, QueryError> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            let second = self.ident()?;
            Ok(ColumnRef {
                table: Some(first),
                column: second,
            })
        } else {
            Ok(ColumnRef::bare(first))
        }
    }

    fn select_item(&mut self) -> Result<SelectItem, QueryError> {
        if self.eat_sym("*") {
            return Ok(SelectItem::Star);
        }
        if let (Some(Tok::Word(w)), Some(Tok::Sym("("))) =
            (self.toks.get(self.pos), self.toks.get(self.pos + 1))
        {
            let func = AggFunc::parse(w)
                .ok_or_else(|| QueryError::Syntax(format!("unknown aggregate `{w}`")))?;
            self.pos += 2;
            let column = if self.eat_sym("*") {
                if func != AggFunc::Count {
                    return Err(QueryError::Syntax("only count accepts `*`".into()));
                }
                None
            } else {
                Some(self.column()?)
            };
            self.expect_sym(")")?;
            return Ok(SelectItem::Aggregate { func, column });
        }
        Ok(SelectItem::Column(self.column()?))
    }

    fn literal(&mut self) -> Result<Value, QueryError> {
        match self.next() {
            Some(Tok::Number(n)) => parse_number(&n)
                .ok_or_else(|| QueryError::Syntax(format!("bad number `{n}`"))),
            Some(Tok::Str(s)) => Ok(Value::Text(s)),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("true") => Ok(Value::Bool(true)),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("false") => Ok(Value::Bool(false)),
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("null") => Ok(Value::Null),
            other => Err(QueryError::Syntax(format!(
                "expected literal, found {other:?}"
            ))),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, QueryError> {
        let column = self.column()?;
        if self.eat_keyword("in") {
            if let Some(Tok::Var(v)) = self.peek().cloned() {
                self.pos += 1;
                return Ok(Predicate::InVar { column, var: v });
            }
            let mut values = Vec::new();
            if !self.eat_sym("(") {
                // bare list, as left by inline rendering of a bound variable
                values.push(self.literal()?);
                while self.eat_sym(",") {
                    values.push(self.literal()?);
                }
                return Ok(Predicate::In { column, values });
            }
            if let Some(Tok::Var(v)) = self.peek().cloned() {
                self.pos += 1;
                self.expect_sym(")")?;
                return Ok(Predicate::InVar { column, var: v });
            }
            if !self.eat_sym(")") {
                loop {
                    values.push(self.literal()?);
                    if self.eat_sym(")") {
                        break;
                    }
                    self.expect_sym(",")?;
                }
            }
            return Ok(Predicate::In { column, values });
        }
        let op = match self.next() {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("!=")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            other => {
                return Err(QueryError::Syntax(format!(
                    "expected comparison, found {other:?}"
                )))
            }
        };
        let value = self.literal()?;
        Ok(Predicate::Cmp { column, op, value })
    }

    fn query(&mut self) -> Result<StructuredQuery, QueryError> {
        self.expect_keyword("select")?;
        let mut select = vec![self.select_item()?];
        while self.eat_sym(",") {
            select.push(self.select_item()?);
        }
        self.expect_keyword("from")?;
        let from = self.ident()?;
        let mut join = None;
        if self.eat_keyword("join") {
            let table = self.ident()?;
            self.expect_keyword("on")?;
            let left = self.column()?;
            self.expect_sym("=")?;
            let right = self.column()?;
            join = Some(Join { table, left, right });
        }
        let mut filters = Vec::new();
        if self.eat_keyword("where") {
            filters.push(self.predicate()?);
            while self.eat_keyword("and") {
                filters.push(self.predicate()?);
            }
        }
        let mut group_by = Vec::new();
        if self.eat_keyword("group") {
            self.expect_keyword("by")?;
            group_by.push(self.column()?);
            while self.eat_sym(",") {
                group_by.push(self.column()?);
            }
        }
        self.eat_sym(";");
        if let Some(t) = self.peek() {
            return Err(QueryError::Syntax(format!("trailing input at {t:?}")));
        }
        Ok(StructuredQuery {
            select,
            from,
            join,
            filters,
            group_by,
        })
    }
}

pub(crate) fn parse_number(s: &str) -> Option<Value> {
    if let Ok(i) = s.parse::<i64>() {
        return Some(Value::Int(i));
    }
    s.parse::<f64>().ok().map(Value::Float)
}

/// Parses the textual mini-language.
pub fn parse_query(src: &str) -> Result<StructuredQuery, QueryError> {
    let toks = tokenize(src)?;
    Parser { toks, pos: 0 }.query()
}

// ---------------------------------------------------------------------------
// execution

#[derive(Clone, Copy)]
struct Resolved {
    side: usize,
    index: usize,
    ty: ColumnType,
}

struct Sources<'a> {
    tables: Vec<&'a Table>,
}

impl Sources<'_> {
    fn resolve(&self, c: &ColumnRef) -> Result<Resolved, QueryError> {
        let mut found = None;
        for (side, t) in self.tables.iter().enumerate() {
            if c.table.as_deref().is_some_and(|q| q != t.name()) {
                continue;
            }
            if let Some(index) = t.schema.column_index(&c.column) {
                if found.is_some() {
                    return Err(QueryError::AmbiguousColumn(c.to_string()));
                }
                found = Some(Resolved {
                    side,
                    index,
                    ty: t.schema.columns[index].ty,
                });
            }
        }
        if let Some(q) = &c.table {
            if !self.tables.iter().any(|t| t.name() == q) {
                return Err(QueryError::UnknownTable(q.clone()));
            }
        }
        found.ok_or_else(|| QueryError::UnknownColumn(c.to_string()))
    }
}

fn literal_fits(v: &Value, ty: ColumnType) -> bool {
    matches!(
        (v, ty),
        (Value::Null, _)
            | (Value::Int(_) | Value::Float(_), ColumnType::Int | ColumnType::Float)
            | (Value::Text(_), ColumnType::Text)
            | (Value::Bool(_), ColumnType::Bool)
    )
}

fn check_literal(c: &ColumnRef, ty: ColumnType, v: &Value) -> Result<(), QueryError> {
    if literal_fits(v, ty) {
        Ok(())
    } else {
        Err(QueryError::TypeMismatch(format!(
            "`{c}` is {ty}, literal is {v:?}"
        )))
    }
}

type Joined<'a> = Vec<&'a Row>;

fn cell<'a>(row: &Joined<'a>, r: Resolved) -> &'a Value {
    &row[r.side].values[r.index]
}

fn group_key(v: &Value) -> String {
    match v {
        Value::Null => "n".into(),
        Value::Bool(b) => format!("b{b}"),
        Value::Int(i) => format!("i{i}"),
        Value::Float(f) if libm::trunc(*f) == *f && f.abs() < 9.0e15 => format!("i{}", *f as i64),
        Value::Float(f) => format!("f{:x}", f.to_bits()),
        Value::Text(s) => format!("t{s}"),
    }
}

fn aggregate(func: AggFunc, values: &[&Value], rows: usize) -> Value {
    let present: Vec<&Value> = values.iter().copied().filter(|v| !v.is_null()).collect();
    match func {
        AggFunc::Count => Value::Int(if values.is_empty() {
            rows as i64
        } else {
            present.len() as i64
        }),
        AggFunc::Sum => {
            if present.is_empty() {
                return Value::Null;
            }
            if present.iter().all(|v| matches!(v, Value::Int(_))) {
                let mut acc: i64 = 0;
                let mut overflow = false;
                for v in &present {
                    if let Value::Int(i) = v {
                        match acc.checked_add(*i) {
                            Some(s) => acc = s,
                            None => overflow = true,
                        }
                    }
                }
                if !overflow {
                    return Value::Int(acc);
                }
            }
            Value::Float(present.iter().filter_map(|v| v.as_f64()).sum())
        }
        AggFunc::Avg => {
            if present.is_empty() {
                return Value::Null;
            }
            let sum: f64 = present.iter().filter_map(|v| v.as_f64()).sum();
            Value::Float(sum / present.len() as f64)
        }
        AggFunc::Min | AggFunc::Max => {
            let best = if func == AggFunc::Min {
                present.iter().min_by(|a, b| a.total_cmp(b))
            } else {
                present.iter().max_by(|a, b| a.total_cmp(b))
            };
            best.map_or(Value::Null, |v| (*v).clone())
        }
    }
}

fn eval(p: &ResolvedPredicate, row: &Joined<'_>) -> bool {
    let v = cell(row, p.col);
    match &p.kind {
        PredKind::Cmp(op, lit) => {
            if v.is_null() || lit.is_null() {
                return false;
            }
            let ord = v.total_cmp(lit);
            match op {
                CmpOp::Eq => ord == Ordering::Equal,
                CmpOp::Ne => ord != Ordering::Equal,
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Le => ord != Ordering::Greater,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Ge => ord != Ordering::Less,
            }
        }
        PredKind::In(values) => values.iter().any(|x| v.loose_eq(x)),
    }
}

enum PredKind {
    Cmp(CmpOp, Value),
    In(Vec<Value>),
}

struct ResolvedPredicate {
    col: Resolved,
    kind: PredKind,
}

/// Runs `query` against `store`. Provenance lists `(table, row_id)` for
/// every row that contributed to an output row.
pub fn exec_structured(store: &TableStore, query: &StructuredQuery) -> Result<ResultSet, QueryError> {
    let from = store
        .get(&query.from)
        .ok_or_else(|| QueryError::UnknownTable(query.from.clone()))?;
    let mut tables = vec![from];
    if let Some(j) = &query.join {
        tables.push(
            store
                .get(&j.table)
                .ok_or_else(|| QueryError::UnknownTable(j.table.clone()))?,
        );
    }
    let src = Sources { tables };

    let mut preds = Vec::new();
    for p in &query.filters {
        match p {
            Predicate::Cmp { column, op, value } => {
                let col = src.resolve(column)?;
                check_literal(column, col.ty, value)?;
                preds.push(ResolvedPredicate {
                    col,
                    kind: PredKind::Cmp(*op, value.clone()),
                });
            }
            Predicate::In { column, values } => {
                let col = src.resolve(column)?;
                for v in values {
                    check_literal(column, col.ty, v)?;
                }
                preds.push(ResolvedPredicate {
                    col,
                    kind: PredKind::In(values.clone()),
                });
            }
            Predicate::InVar { var, .. } => {
                return Err(QueryError::UnboundVariable(format!(
                    "$var_{}",
                    var.target_index
                )))
            }
        }
    }

    let joined: Vec<Joined<'_>> = match &query.join {
        None => from.rows().iter().map(|r| vec![r]).collect(),
        Some(j) => {
            let l = src.resolve(&j.left)?;
            let r = src.resolve(&j.right)?;
            if l.side == r.side {
                return Err(QueryError::Invalid(
                    "join condition must compare the two tables".into(),
                ));
            }
            let (l, r) = if l.side == 0 { (l, r) } else { (r, l) };
            let right = src.tables[1];
            let mut out = Vec::new();
            for lr in from.rows() {
                let lv = &lr.values[l.index];
                for rr in right.rows() {
                    if lv.loose_eq(&rr.values[r.index]) {
                        out.push(vec![lr, rr]);
                    }
                }
            }
            out
        }
    };
    let filtered: Vec<Joined<'_>> = joined
        .into_iter()
        .filter(|row| preds.iter().all(|p| eval(p, row)))
        .collect();

    let provenance_of = |row: &Joined<'_>| -> Vec<SourceRef> {
        row.iter()
            .zip(&src.tables)
            .map(|(r, t)| SourceRef::Row {
                table: t.name().to_owned(),
                row_id: r.row_id,
            })
            .collect()
    };

    let has_agg = query
        .select
        .iter()
        .any(|s| matches!(s, SelectItem::Aggregate { .. }));

    if !has_agg && query.group_by.is_empty() {
        let mut cols: Vec<(String, Resolved)> = Vec::new();
        for item in &query.select {
            match item {
                SelectItem::Star => {
                    for (side, t) in src.tables.iter().enumerate() {
                        for (index, c) in t.schema.columns.iter().enumerate() {
                            cols.push((
                                c.name.clone(),
                                Resolved {
                                    side,
                                    index,
                                    ty: c.ty,
                                },
                            ));
                        }
                    }
                }
                SelectItem::Column(c) => cols.push((c.column.clone(), src.resolve(c)?)),
                SelectItem::Aggregate { .. } => unreachable!(),
            }
        }
        let mut rs = ResultSet::new(cols.iter().map(|(n, _)| n.clone()).collect());
        for row in &filtered {
            rs.push(
                cols.iter().map(|(_, r)| cell(row, *r).clone()).collect(),
                provenance_of(row),
            );
        }
        return Ok(rs);
    }

    let keys: Vec<Resolved> = query
        .group_by
        .iter()
        .map(|c| src.resolve(c))
        .collect::<Result<_, _>>()?;
    enum Out {
        Key(usize),
        Agg(AggFunc, Option<Resolved>),
    }
    let mut outs = Vec::new();
    let mut names = Vec::new();
    for item in &query.select {
        match item {
            SelectItem::Star => {
                return Err(QueryError::Invalid("`*` cannot be mixed with aggregates".into()))
            }
            SelectItem::Column(c) => {
                let r = src.resolve(c)?;
                let pos = keys
                    .iter()
                    .position(|k| k.side == r.side && k.index == r.index)
                    .ok_or_else(|| {
                        QueryError::Invalid(format!("`{c}` must appear in GROUP BY"))
                    })?;
                outs.push(Out::Key(pos));
                names.push(c.column.clone());
            }
            SelectItem::Aggregate { func, column } => {
                let r = match column {
                    None => None,
                    Some(c) => {
                        let r = src.resolve(c)?;
                        let numeric = matches!(r.ty, ColumnType::Int | ColumnType::Float);
                        if matches!(func, AggFunc::Sum | AggFunc::Avg) && !numeric {
                            return Err(QueryError::TypeMismatch(format!(
                                "{}(`{c}`) needs a numeric column",
                                func.name()
                            )));
                        }
                        Some(r)
                    }
                };
                names.push(match column {
                    None => format!("{}(*)", func.name()),
                    Some(c) => format!("{}({c})", func.name()),
                });
                outs.push(Out::Agg(*func, r));
            }
        }
    }

    let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
    let mut index: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for (i, row) in filtered.iter().enumerate() {
        let key_vals: Vec<Value> = keys.iter().map(|k| cell(row, *k).clone()).collect();
        let k: Vec<String> = key_vals.iter().map(group_key).collect();
        let g = *index.entry(k).or_insert_with(|| {
            groups.push((key_vals, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }

    let mut rs = ResultSet::new(names);
    for (key_vals, members) in &groups {
        let mut row = Vec::with_capacity(outs.len());
        for o in &outs {
            row.push(match o {
                Out::Key(k) => key_vals[*k].clone(),
                Out::Agg(func, col) => {
                    let vals: Vec<&Value> = match col {
                        None => Vec::new(),
                        Some(r) => members.iter().map(|&m| cell(&filtered[m], *r)).collect(),
                    };
                    aggregate(*func, &vals, members.len())
                }
            });
        }
        let mut prov = Vec::new();
        for &m in members {
            prov.extend(provenance_of(&filtered[m]));
        }
        rs.push(row, prov);
    }
    Ok(rs)
}

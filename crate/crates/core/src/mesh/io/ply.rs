//! Minimal PLY codec: ASCII and binary (little/big endian), scalar and list
//! properties of every standard type. Values are held as `f64` columns.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            other => return Err(Error::Parse(format!("unknown PLY type `{other}`"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            PlyType::I8 => "char",
            PlyType::U8 => "uchar",
            PlyType::I16 => "short",
            PlyType::U16 => "ushort",
            PlyType::I32 => "int",
            PlyType::U32 => "uint",
            PlyType::F32 => "float",
            PlyType::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, PlyType::F32 | PlyType::F64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlyColumn {
    Scalar(PlyType, Vec<f64>),
    List {
        count_type: PlyType,
        item_type: PlyType,
        rows: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyProperty {
    pub name: String,
    pub column: PlyColumn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PlyProperty>,
}

impl PlyElement {
    pub fn new(name: impl Into<String>, count: usize) -> Self {
        Self {
            name: name.into(),
            count,
            properties: Vec::new(),
        }
    }

    pub fn scalar(mut self, name: &str, ty: PlyType, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.count);
        self.properties.push(PlyProperty {
            name: name.to_string(),
            column: PlyColumn::Scalar(ty, values),
        });
        self
    }

    pub fn list(mut self, name: &str, count_type: PlyType, item_type: PlyType, rows: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(rows.len(), self.count);
        self.properties.push(PlyProperty {
            name: name.to_string(),
            column: PlyColumn::List {
                count_type,
                item_type,
                rows,
            },
        });
        self
    }

    pub fn property(&self, name: &str) -> Option<&PlyColumn> {
        self.properties
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.column)
    }

    pub fn scalar_column(&self, name: &str) -> Option<&[f64]> {
        match self.property(name)? {
            PlyColumn::Scalar(_, v) => Some(v),
            PlyColumn::List { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub encoding: PlyEncoding,
    pub comments: Vec<String>,
    pub elements: Vec<PlyElement>,
}

impl PlyData {
    pub fn new(encoding: PlyEncoding) -> Self {
        Self {
            encoding,
            comments: Vec::new(),
            elements: Vec::new(),
        }
    }

    pub fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// Value of a `comment <key> <rest>` line.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let rest = c.strip_prefix(key)?;
            rest.strip_prefix(' ').map(str::trim)
        })
    }
}

enum HeaderProp {
    Scalar(String, PlyType),
    List(String, PlyType, PlyType),
}

struct HeaderElement {
    name: String,
    count: usize,
    props: Vec<HeaderProp>,
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let marker = b"end_header";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Parse("PLY header has no end_header".into()))?;
    let mut body_start = pos + marker.len();
    // the header line ends with \n or \r\n
    while body_start < bytes.len() && (bytes[body_start] == b'\r' || bytes[body_start] == b' ') {
        body_start += 1;
    }
    if body_start < bytes.len() && bytes[body_start] == b'\n' {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| Error::Parse("PLY header is not UTF-8".into()))?;

    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::Parse("missing `ply` magic".into()));
    }
    let mut encoding = None;
    let mut comments = Vec::new();
    let mut elements: Vec<HeaderElement> = Vec::new();
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some("binary_big_endian") => PlyEncoding::BinaryBigEndian,
                    other => return Err(Error::Parse(format!("unknown PLY format {other:?}"))),
                })
            }
            Some("comment") => {
                comments.push(line["comment".len()..].trim().to_string());
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::Parse("element without name".into()))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad count for element {name}")))?;
                elements.push(HeaderElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Parse("property before element".into()))?;
                let t = tok
                    .next()
                    .ok_or_else(|| Error::Parse("property without type".into()))?;
                if t == "list" {
                    let ct = PlyType::parse(tok.next().unwrap_or(""))?;
                    let it = PlyType::parse(tok.next().unwrap_or(""))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| Error::Parse("list property without name".into()))?;
                    el.props.push(HeaderProp::List(name.to_string(), ct, it));
                } else {
                    let ty = PlyType::parse(t)?;
                    let name = tok
                        .next()
                        .ok_or_else(|| Error::Parse("property without name".into()))?;
                    el.props.push(HeaderProp::Scalar(name.to_string(), ty));
                }
            }
            Some(other) => return Err(Error::Parse(format!("unexpected header keyword `{other}`"))),
            None => {}
        }
    }
    let encoding = encoding.ok_or_else(|| Error::Parse("PLY header has no format line".into()))?;
    let body = &bytes[body_start..];
    let mut reader: Box<dyn ValueReader + '_> = match encoding {
        PlyEncoding::Ascii => Box::new(AsciiReader::new(body)?),
        PlyEncoding::BinaryLittleEndian => Box::new(BinaryReader { data: body, pos: 0, little: true }),
        PlyEncoding::BinaryBigEndian => Box::new(BinaryReader { data: body, pos: 0, little: false }),
    };

    let mut out = Vec::with_capacity(elements.len());
    for he in elements {
        let mut columns: Vec<PlyColumn> = he
            .props
            .iter()
            .map(|p| match p {
                HeaderProp::Scalar(_, t) => PlyColumn::Scalar(*t, Vec::with_capacity(he.count)),
                HeaderProp::List(_, ct, it) => PlyColumn::List {
                    count_type: *ct,
                    item_type: *it,
                    rows: Vec::with_capacity(he.count),
                },
            })
            .collect();
        for _ in 0..he.count {
            reader.begin_row()?;
            for col in columns.iter_mut() {
                match col {
                    PlyColumn::Scalar(t, v) => v.push(reader.read(*t)?),
                    PlyColumn::List {
                        count_type,
                        item_type,
                        rows,
                    } => {
                        let n = reader.read(*count_type)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(Error::Parse(format!("bad list length {n}")));
                        }
                        let mut row = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            row.push(reader.read(*item_type)?);
                        }
                        rows.push(row);
                    }
                }
            }
        }
        let properties = he
            .props
            .into_iter()
            .zip(columns)
            .map(|(p, column)| PlyProperty {
                name: match p {
                    HeaderProp::Scalar(n, _) | HeaderProp::List(n, _, _) => n,
                },
                column,
            })
            .collect();
        out.push(PlyElement {
            name: he.name,
            count: he.count,
            properties,
        });
    }
    Ok(PlyData {
        encoding,
        comments,
        elements: out,
    })
}

trait ValueReader {
    fn begin_row(&mut self) -> Result<()> {
        Ok(())
    }
    fn read(&mut self, ty: PlyType) -> Result<f64>;
}

struct AsciiReader<'a> {
    lines: std::str::Lines<'a>,
    tokens: std::vec::IntoIter<&'a str>,
}

impl<'a> AsciiReader<'a> {
    fn new(body: &'a [u8]) -> Result<Self> {
        let text = std::str::from_utf8(body).map_err(|_| Error::Parse("ASCII PLY body is not UTF-8".into()))?;
        Ok(Self {
            lines: text.lines(),
            tokens: Vec::new().into_iter(),
        })
    }
}

impl ValueReader for AsciiReader<'_> {
    fn begin_row(&mut self) -> Result<()> {
        if self.tokens.len() > 0 {
            return Err(Error::Parse("trailing values on ASCII PLY row".into()));
        }
        loop {
            let line = self
                .lines
                .next()
                .ok_or_else(|| Error::Parse("ASCII PLY body ended early".into()))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                self.tokens = toks.into_iter();
                return Ok(());
            }
        }
    }

    fn read(&mut self, ty: PlyType) -> Result<f64> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| Error::Parse("ASCII PLY row too short".into()))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad number `{tok}`")))?;
        if ty.is_integer() && v.fract() != 0.0 {
            return Err(Error::Parse(format!("non-integer `{tok}` for integer property")));
        }
        Ok(v)
    }
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
    little: bool,
}

impl ValueReader for BinaryReader<'_> {
    fn read(&mut self, ty: PlyType) -> Result<f64> {
        let n = ty.size();
        let bytes = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Parse("binary PLY body ended early".into()))?;
        self.pos += n;
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(bytes);
        if !self.little {
            buf[..n].reverse();
        }
        Ok(match ty {
            PlyType::I8 => buf[0] as i8 as f64,
            PlyType::U8 => buf[0] as f64,
            PlyType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            PlyType::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes(buf),
        })
    }
}

pub fn write_ply<W: Write>(w: &mut W, data: &PlyData) -> Result<()> {
    let mut header = String::from("ply\n");
    header.push_str(match data.encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
        PlyEncoding::BinaryBigEndian => "format binary_big_endian 1.0\n",
    });
    for c in &data.comments {
        header.push_str("comment ");
        header.push_str(c);
        header.push('\n');
    }
    for el in &data.elements {
        header.push_str(&format!("element {} {}\n", el.name, el.count));
        for p in &el.properties {
            match &p.column {
                PlyColumn::Scalar(t, _) => header.push_str(&format!("property {} {}\n", t.name(), p.name)),
                PlyColumn::List {
                    count_type,
                    item_type,
                    ..
                } => header.push_str(&format!(
                    "property list {} {} {}\n",
                    count_type.name(),
                    item_type.name(),
                    p.name
                )),
            }
        }
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut buf: Vec<u8> = Vec::new();
    for el in &data.elements {
        for row in 0..el.count {
            let mut first = true;
            for p in &el.properties {
                match &p.column {
                    PlyColumn::Scalar(t, v) => put_value(&mut buf, data.encoding, *t, v[row], &mut first),
                    PlyColumn::List {
                        count_type,
                        item_type,
                        rows,
                    } => {
                        put_value(&mut buf, data.encoding, *count_type, rows[row].len() as f64, &mut first);
                        for &x in &rows[row] {
                            put_value(&mut buf, data.encoding, *item_type, x, &mut first);
                        }
                    }
                }
            }
            if data.encoding == PlyEncoding::Ascii {
                buf.push(b'\n');
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn put_value(buf: &mut Vec<u8>, enc: PlyEncoding, ty: PlyType, v: f64, first: &mut bool) {
    match enc {
        PlyEncoding::Ascii => {
            if !*first {
                buf.push(b' ');
            }
            *first = false;
            let s = match ty {
                PlyType::F32 => format!("{}", v as f32),
                PlyType::F64 => format!("{v}"),
                _ => format!("{}", v as i64),
            };
            buf.extend_from_slice(s.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian | PlyEncoding::BinaryBigEndian => {
            let mut bytes: Vec<u8> = match ty {
                PlyType::I8 => (v as i8).to_le_bytes().to_vec(),
                PlyType::U8 => (v as u8).to_le_bytes().to_vec(),
                PlyType::I16 => (v as i16).to_le_bytes().to_vec(),
                PlyType::U16 => (v as u16).to_le_bytes().to_vec(),
                PlyType::I32 => (v as i32).to_le_bytes().to_vec(),
                PlyType::U32 => (v as u32).to_le_bytes().to_vec(),
                PlyType::F32 => (v as f32).to_le_bytes().to_vec(),
                PlyType::F64 => v.to_le_bytes().to_vec(),
            };
            if enc == PlyEncoding::BinaryBigEndian {
                bytes.reverse();
            }
            buf.extend_from_slice(&bytes);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(enc: PlyEncoding) -> PlyData {
        let mut d = PlyData::new(enc);
        d.comments.push("config_hash abc123".into());
        d.elements.push(
            PlyElement::new("vertex", 2)
                .scalar("x", PlyType::F64, vec![0.1, -2.5])
                .scalar("label", PlyType::I32, vec![1.0, 0.0])
                .scalar("w", PlyType::U8, vec![255.0, 3.0]),
        );
        d.elements.push(PlyElement::new("face", 1).list(
            "vertex_indices",
            PlyType::U8,
            PlyType::I32,
            vec![vec![0.0, 1.0, 1.0]],
        ));
        d
    }

    #[test]
    fn round_trips_every_encoding() {
        for enc in [
            PlyEncoding::Ascii,
            PlyEncoding::BinaryLittleEndian,
            PlyEncoding::BinaryBigEndian,
        ] {
            let d = sample(enc);
            let mut bytes = Vec::new();
            write_ply(&mut bytes, &d).unwrap();
            let back = parse_ply(&bytes).unwrap();
            assert_eq!(back, d, "{enc:?}");
            assert_eq!(back.comment_value("config_hash"), Some("abc123"));
        }
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let mut bytes = Vec::new();
        write_ply(&mut bytes, &sample(PlyEncoding::BinaryLittleEndian)).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_ply(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_ply(b"not a ply\nend_header\n").is_err());
        assert!(parse_ply(b"ply\nelement vertex 1\nproperty float x\nend_header\n1\n").is_err());
    }
}

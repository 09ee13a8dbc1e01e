use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GeometryError, Point, Result, TriangleSoup};

/// On-disk mesh encodings understood by [`write_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
    PlyBinary,
}

impl MeshFormat {
    /// Guesses from the file extension; PLY defaults to binary.
    pub fn from_path(path: &Path) -> Result<Self> {
        match extension(path).as_deref() {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::PlyBinary),
            _ => Err(GeometryError::Unsupported(format!(
                "mesh extension of {} (expected .obj or .ply)",
                path.display()
            ))),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GeometryError + '_ {
    move |source| GeometryError::Io { path: path.to_path_buf(), source }
}

/// Reads an OBJ or PLY file, dispatching on extension.
pub fn load_mesh(path: &Path) -> Result<TriangleSoup> {
    let name = path.display().to_string();
    match extension(path).as_deref() {
        Some("obj") => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            parse_obj(&text, &name)
        }
        Some("ply") => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            parse_ply(&bytes, &name)
        }
        _ => Err(GeometryError::Unsupported(format!("mesh extension of {name}"))),
    }
}

fn parse_err(name: &str, location: impl ToString, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse { path: name.to_string(), location: location.to_string(), msg: msg.into() }
}

/// Parses OBJ text. Only `v` and `f` records matter; polygons are fan
/// triangulated and negative (relative) indices are honoured.
pub fn parse_obj(text: &str, name: &str) -> Result<TriangleSoup> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(name, lineno, "vertex needs three coordinates"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| parse_err(name, lineno, format!("bad coordinate {tok:?}")))?;
                }
                if !c.iter().all(|v: &f64| v.is_finite()) {
                    return Err(parse_err(name, lineno, "non-finite coordinate"));
                }
                vertices.push(Point::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head
                        .parse()
                        .map_err(|_| parse_err(name, lineno, format!("bad face index {tok:?}")))?;
                    let n = vertices.len() as i64;
                    let idx = match raw {
                        0 => return Err(parse_err(name, lineno, "face index 0 (indices are 1-based)")),
                        r if r > 0 => r - 1,
                        r => n + r,
                    };
                    if idx < 0 || idx >= n {
                        return Err(parse_err(
                            name,
                            lineno,
                            format!("face index {raw} out of range for {n} vertices"),
                        ));
                    }
                    poly.push(idx as u32);
                }
                if poly.len() < 3 {
                    return Err(parse_err(name, lineno, "face needs at least three vertices"));
                }
                for k in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleSoup::new(vertices, triangles)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Self::Scalar(n, _) | Self::List(n, _, _) => n,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Value source for either PLY encoding.
trait Reader {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
    fn end_record(&mut self) -> Result<()>;
}

struct AsciiReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    tokens: std::vec::IntoIter<&'a str>,
    lineno: usize,
    header_lines: usize,
    name: &'a str,
}

impl<'a> Reader for AsciiReader<'a> {
    fn scalar(&mut self, _ty: Scalar) -> Result<f64> {
        loop {
            if let Some(tok) = self.tokens.next() {
                return tok.parse().map_err(|_| {
                    parse_err(self.name, self.lineno, format!("bad number {tok:?}"))
                });
            }
            let (i, line) = self
                .lines
                .next()
                .ok_or_else(|| parse_err(self.name, self.lineno, "unexpected end of data"))?;
            self.lineno = i + 1 + self.header_lines;
            self.tokens = line.split_whitespace().collect::<Vec<_>>().into_iter();
        }
    }

    fn end_record(&mut self) -> Result<()> {
        if self.tokens.next().is_some() {
            return Err(parse_err(self.name, self.lineno, "trailing values in record"));
        }
        Ok(())
    }
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
    name: &'a str,
}

impl Reader for BinaryReader<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.data.len() {
            return Err(parse_err(
                self.name,
                format!("byte {}", self.base + self.pos),
                "unexpected end of binary data",
            ));
        }
        let v = ty.read_le(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Parses an ASCII or binary little-endian PLY. Elements other than
/// `vertex` and `face` are read and discarded.
pub fn parse_ply(bytes: &[u8], name: &str) -> Result<TriangleSoup> {
    let mut pos = 0;
    let mut header = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(name, header.len() + 1, "unterminated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| parse_err(name, header.len() + 1, "header is not utf-8"))?
            .trim_end_matches('\r')
            .to_string();
        pos += end + 1;
        let done = line.trim() == "end_header";
        header.push(line);
        if done {
            break;
        }
    }
    if header.first().map(|l| l.trim()) != Some("ply") {
        return Err(parse_err(name, 1, "missing 'ply' magic"));
    }

    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in header.iter().enumerate().skip(1) {
        let lineno = i + 1;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, ..] => {
                return Err(GeometryError::Unsupported(format!("PLY format {other}")));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            ["element", ename, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(name, lineno, format!("bad element count {count:?}")))?;
                elements.push(Element { name: ename.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ct, it, pname] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(GeometryError::Unsupported(format!("PLY list type in {line:?}")));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(name, lineno, "property before element"))?;
                el.props.push(Property::List(pname.to_string(), ct, it));
            }
            ["property", ty, pname] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| GeometryError::Unsupported(format!("PLY property type {ty}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(name, lineno, "property before element"))?;
                el.props.push(Property::Scalar(pname.to_string(), ty));
            }
            _ => return Err(parse_err(name, lineno, format!("unrecognised header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(name, 2, "missing format line"))?;

    let body = &bytes[pos..];
    if binary {
        let mut r = BinaryReader { data: body, pos: 0, base: pos, name };
        read_elements(&elements, &mut r, name)
    } else {
        let text = std::str::from_utf8(body)
            .map_err(|_| parse_err(name, header.len() + 1, "body is not utf-8"))?;
        let mut r = AsciiReader {
            lines: text.lines().enumerate().peekable(),
            tokens: Vec::new().into_iter(),
            lineno: header.len(),
            header_lines: header.len(),
            name,
        };
        read_elements(&elements, &mut r, name)
    }
}

fn read_elements(elements: &[Element], r: &mut dyn Reader, name: &str) -> Result<TriangleSoup> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for el in elements {
        let xyz: Option<[usize; 3]> = if el.name == "vertex" {
            let find = |n: &str| el.props.iter().position(|p| p.name() == n);
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(parse_err(name, "header", "vertex element lacks x/y/z")),
            }
        } else {
            None
        };
        let is_face = el.name == "face";
        let face_prop = el
            .props
            .iter()
            .position(|p| matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"));
        if is_face && face_prop.is_none() {
            return Err(parse_err(name, "header", "face element lacks a vertex index list"));
        }

        let mut scalars = vec![0.0; el.props.len()];
        let mut list = Vec::new();
        for record in 0..el.count {
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar(_, ty) => scalars[k] = r.scalar(*ty)?,
                    Property::List(_, ct, it) => {
                        let n = r.scalar(*ct)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(parse_err(name, format!("{} {record}", el.name), "bad list length"));
                        }
                        let keep = Some(k) == face_prop;
                        if keep {
                            list.clear();
                        }
                        for _ in 0..n as usize {
                            let v = r.scalar(*it)?;
                            if keep {
                                list.push(v);
                            }
                        }
                    }
                }
            }
            r.end_record()?;
            if let Some([x, y, z]) = xyz {
                vertices.push(Point::new(scalars[x], scalars[y], scalars[z]));
            } else if is_face {
                if list.len() < 3 {
                    return Err(parse_err(name, format!("face {record}"), "face needs at least three vertices"));
                }
                let mut idx = Vec::with_capacity(list.len());
                for &v in &list {
                    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                        return Err(parse_err(name, format!("face {record}"), format!("bad vertex index {v}")));
                    }
                    idx.push(v as u32);
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
    }
    TriangleSoup::new(vertices, triangles)
}

/// Serialises `soup` as OBJ text with `comments` as leading `#` lines.
pub fn obj_string(soup: &TriangleSoup, comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    for v in &soup.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &soup.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Serialises `soup` as PLY with double-precision vertices.
pub fn ply_bytes(soup: &TriangleSoup, binary: bool, comments: &[String]) -> Vec<u8> {
    let mut h = String::from("ply\n");
    h.push_str(if binary { "format binary_little_endian 1.0\n" } else { "format ascii 1.0\n" });
    for c in comments {
        let _ = writeln!(h, "comment {c}");
    }
    let _ = write!(
        h,
        "element vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        soup.vertices.len(),
        soup.triangles.len()
    );
    let mut out = h.into_bytes();
    if binary {
        for v in &soup.vertices {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for t in &soup.triangles {
            out.push(3);
            for i in t {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
    } else {
        let mut s = String::new();
        for v in &soup.vertices {
            let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
        }
        for t in &soup.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        out.extend_from_slice(s.as_bytes());
    }
    out
}

pub fn write_obj(path: &Path, soup: &TriangleSoup, comments: &[String]) -> Result<()> {
    fs::write(path, obj_string(soup, comments)).map_err(io_err(path))
}

pub fn write_ply(path: &Path, soup: &TriangleSoup, binary: bool, comments: &[String]) -> Result<()> {
    fs::write(path, ply_bytes(soup, binary, comments)).map_err(io_err(path))
}

pub fn write_mesh(path: &Path, soup: &TriangleSoup, format: MeshFormat, comments: &[String]) -> Result<()> {
    match format {
        MeshFormat::Obj => write_obj(path, soup, comments),
        MeshFormat::PlyAscii => write_ply(path, soup, false, comments),
        MeshFormat::PlyBinary => write_ply(path, soup, true, comments),
    }
}

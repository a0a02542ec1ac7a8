//! Text model format. Floats are written as exact hexadecimal literals
//! (`0x1.8p-1`), so a save/load round trip is bit-identical.

use std::fs;
use std::path::Path;

use crate::corpus::write_atomic;
use crate::error::{Error, Result};

use super::{shape_table, Architecture, SelectorKind, SelectorModel};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "curator-selector";

/// `%a`-style rendering of a finite `f64`.
pub fn format_hex_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (lead, e) = match (exp, frac) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, -1022),
        _ => (1, exp - 1023),
    };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e:+}")
    }
}

/// Inverse of [`format_hex_f64`] for the canonical forms it produces.
pub fn parse_hex_f64(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let signed = |v: f64| if neg { -v } else { v };
    match body {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(signed(f64::INFINITY)),
        _ => {}
    }
    let body = body.strip_prefix("0x")?;
    let (mantissa, exp) = body.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, digits) = match mantissa.split_once('.') {
        Some((l, d)) if !d.is_empty() => (l, d),
        Some(_) => return None,
        None => (mantissa, ""),
    };
    if digits.len() > 13 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let frac = if digits.is_empty() {
        0
    } else {
        u64::from_str_radix(digits, 16).ok()? << (4 * (13 - digits.len()))
    };
    let bits = match lead {
        "0" if frac == 0 && exp == 0 => 0,
        "0" if exp == -1022 => frac,
        "1" if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | frac,
        _ => return None,
    };
    Some(signed(f64::from_bits(bits)))
}

impl SelectorModel {
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
        out.push_str(&format!("kind {}\n", a.kind));
        out.push_str(&format!("input_dim {}\n", a.input_dim));
        out.push_str(&format!("d_model {}\n", a.d_model));
        out.push_str(&format!("ff_dim {}\n", a.ff_dim));
        out.push_str(&format!("layers {}\n", a.layers));
        out.push_str(&format!("hidden {}\n", a.hidden));
        out.push_str(&format!("target_mean {}\n", format_hex_f64(self.target_mean)));
        out.push_str(&format!(
            "fingerprint {}\n",
            self.embedding_fingerprint.as_deref().unwrap_or("-")
        ));
        out.push_str(&format!("shapes {}\n", self.shapes.len()));
        for s in &self.shapes {
            out.push_str(&format!("{} {} {}\n", s.name, s.rows, s.cols));
        }
        out.push_str(&format!("params {}\n", self.params.len()));
        for p in &self.params {
            out.push_str(&format_hex_f64(*p));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader(text.lines());
        let header = r.next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a selector model file".into()))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(bad(format!(
                "unsupported format version {version:?} (expected {FORMAT_VERSION})"
            )));
        }

        let int = |v: String| v.parse::<usize>().map_err(|_| bad(format!("bad integer {v:?}")));
        let float = |v: String| parse_hex_f64(&v).ok_or_else(|| bad(format!("bad float {v:?}")));

        let kind: SelectorKind = r.field("kind")?.parse().map_err(|_| bad("unknown kind".into()))?;
        let arch = Architecture {
            kind,
            input_dim: int(r.field("input_dim")?)?,
            d_model: int(r.field("d_model")?)?,
            ff_dim: int(r.field("ff_dim")?)?,
            layers: int(r.field("layers")?)?,
            hidden: int(r.field("hidden")?)?,
        };
        arch.validate().map_err(|e| bad(e.to_string()))?;
        let target_mean = float(r.field("target_mean")?)?;
        let embedding_fingerprint = Some(r.field("fingerprint")?).filter(|f| f != "-");

        let expected = shape_table(&arch);
        let count = int(r.field("shapes")?)?;
        if count != expected.len() {
            return Err(bad(format!("{count} shapes, architecture needs {}", expected.len())));
        }
        for want in &expected {
            let line = r.next("shape table")?;
            let got = format!("{} {} {}", want.name, want.rows, want.cols);
            if line != got {
                return Err(bad(format!("shape {line:?} does not match {got:?}")));
            }
        }
        let count = int(r.field("params")?)?;
        let total: usize = expected.iter().map(|s| s.len()).sum();
        if count != total {
            return Err(bad(format!("{count} parameters, architecture needs {total}")));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let v = r.next("parameters")?;
            let p = parse_hex_f64(v).ok_or_else(|| bad(format!("bad float {v:?}")))?;
            if !p.is_finite() {
                return Err(bad("non-finite parameter".into()));
            }
            params.push(p);
        }
        if r.next("end marker")? != "end" {
            return Err(bad("missing end marker".into()));
        }
        Ok(Self {
            arch,
            shapes: expected,
            params,
            target_mean,
            embedding_fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

struct Reader<'a>(std::str::Lines<'a>);

impl<'a> Reader<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.0.next().ok_or_else(|| bad(format!("file ends before {what}")))
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let line = self.next(key)?;
        let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("bad line {line:?}")))?;
        if k != key {
            return Err(bad(format!("expected {key}, found {k}")));
        }
        Ok(v.to_string())
    }
}

fn bad(msg: String) -> Error {
    Error::ModelLoadError(msg)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn hex_examples() {
        assert_eq!(format_hex_f64(1.0), "0x1p+0");
        assert_eq!(format_hex_f64(0.75), "0x1.8p-1");
        assert_eq!(format_hex_f64(-2.5), "-0x1.4p+1");
        assert_eq!(format_hex_f64(0.0), "0x0p+0");
        assert_eq!(format_hex_f64(-0.0), "-0x0p+0");
        assert_eq!(format_hex_f64(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
        assert_eq!(parse_hex_f64("0x1.8p-1"), Some(0.75));
        assert_eq!(parse_hex_f64("0x1.8"), None);
        assert_eq!(parse_hex_f64("1.5"), None);
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            let back = parse_hex_f64(&format_hex_f64(x)).unwrap();
            if x.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), x.to_bits());
            }
        }
    }

    fn trained_like() -> SelectorModel {
        let mut m = SelectorModel::init(Architecture::new(SelectorKind::Attention, 7), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
        m.target_mean = 31.25;
        m.embedding_fingerprint = Some("abc123".into());
        m
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = trained_like();
        let back = SelectorModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let x = vec![vec![0.3; 7], vec![-0.2; 7]];
        assert_eq!(back.predict(&x).unwrap().to_bits(), m.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn truncated_and_wrong_version_fail() {
        let text = trained_like().to_text();
        let cut = &text[..text.len() / 2];
        assert!(matches!(SelectorModel::from_text(cut), Err(Error::ModelLoadError(_))));
        let no_end = text.trim_end().trim_end_matches("end");
        assert!(matches!(SelectorModel::from_text(no_end), Err(Error::ModelLoadError(_))));
        let v2 = text.replacen("curator-selector 1", "curator-selector 2", 1);
        assert!(matches!(SelectorModel::from_text(&v2), Err(Error::ModelLoadError(_))));
        assert!(matches!(SelectorModel::from_text(""), Err(Error::ModelLoadError(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = trained_like();
        m.save(&path).unwrap();
        assert_eq!(SelectorModel::load(&path).unwrap(), m);
        assert!(matches!(
            SelectorModel::load(dir.path().join("missing")),
            Err(Error::ModelLoadError(_))
        ));
    }
}

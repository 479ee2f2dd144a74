use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

// Pretty printing with every float written as 17 significant digits, so
// output bytes depend only on the values.
struct FixedFloats<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    forward!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    schema: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// JSON text of `value` with a leading `"schema"` field. Non-finite floats
/// become `null`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats(PrettyFormatter::with_indent(b"  ")));
    Document {
        schema: SCHEMA_VERSION,
        body: value,
    }
    .serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricReport;

    fn report(mrc: f64) -> MetricReport {
        MetricReport {
            mrc,
            imrc_db: crate::metric::imrc(mrc).unwrap(),
            imrc_infinite: mrc == 0.0,
            sh_degree: 2,
            resolution: [4, 5, 6],
            ray_step: 0.1,
            voxels_evaluated: 3,
            voxels_skipped_low_alpha: 100,
            voxels_skipped_no_observation: 17,
        }
    }

    #[test]
    fn fields_in_order_with_full_precision() {
        let s = to_json_string(&report(0.01)).unwrap();
        let keys: Vec<&str> = s
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"').and_then(|l| l.split('"').next()))
            .collect();
        assert_eq!(
            keys,
            [
                "schema",
                "mrc",
                "imrc_db",
                "imrc_infinite",
                "sh_degree",
                "resolution",
                "ray_step",
                "voxels_evaluated",
                "voxels_skipped_low_alpha",
                "voxels_skipped_no_observation"
            ]
        );
        assert!(s.contains("\"mrc\": 1.0000000000000000e-2"), "{s}");
        assert!(s.contains("\"imrc_db\": 2.0000000000000000e1"));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["mrc"].as_f64().unwrap(), 0.01);
        assert_eq!(v["schema"], 1);
    }

    #[test]
    fn floats_round_trip_and_infinity_is_null() {
        let x = 0.1 + 0.2;
        let s = to_json_string(&report(x)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["mrc"].as_f64().unwrap().to_bits(), x.to_bits());

        let s = to_json_string(&report(0.0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v["imrc_db"].is_null());
        assert_eq!(v["imrc_infinite"], true);
    }
}

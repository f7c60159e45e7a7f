//! CSV conventions shared by every exported table: `.` decimal, LF line
//! endings, no quoting, floats in shortest round-trip form.

use std::io::Write;

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1e-7, 123456.789, -0.0, 1e300, 2.0] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(num(2.0), "2.0");
    }

    #[test]
    fn lf_no_quotes() {
        let mut w = csv_writer(Vec::new());
        w.write_record(["a", "b"]).unwrap();
        w.write_record([num(0.5), "x y".to_string()]).unwrap();
        let s = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(s, "a,b\n0.5,x y\n");
    }
}

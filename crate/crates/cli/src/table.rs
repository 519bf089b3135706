//! The fixed CSV schema shared by every emitter.

use std::io::{Read, Write};

pub const HEADER: [&str; 15] = [
    "mechanism",
    "n",
    "d",
    "d_a",
    "u",
    "param",
    "param_value",
    "epsilon",
    "delta",
    "cm_records",
    "cp_accesses",
    "eps_empirical",
    "eps_ci_low",
    "eps_ci_high",
    "verdict",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub mechanism: String,
    pub n: usize,
    pub d: usize,
    pub d_a: usize,
    pub u: usize,
    /// Empty for mechanisms without a tunable parameter.
    pub param: String,
    pub param_value: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub cm_records: Option<u64>,
    pub cp_accesses: Option<f64>,
    pub eps_empirical: Option<f64>,
    pub eps_ci_low: Option<f64>,
    pub eps_ci_high: Option<f64>,
    pub verdict: String,
}

/// Shortest round-trip text: `inf` for infinities, scientific notation
/// outside `[1e-4, 1e16)`.
pub fn format_number(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

impl Row {
    pub fn to_record(&self) -> [String; 15] {
        [
            self.mechanism.clone(),
            self.n.to_string(),
            self.d.to_string(),
            self.d_a.to_string(),
            self.u.to_string(),
            self.param.clone(),
            opt_num(self.param_value),
            format_number(self.epsilon),
            format_number(self.delta),
            opt(self.cm_records),
            opt_num(self.cp_accesses),
            opt_num(self.eps_empirical),
            opt_num(self.eps_ci_low),
            opt_num(self.eps_ci_high),
            self.verdict.clone(),
        ]
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self, String> {
        if rec.len() != HEADER.len() {
            return Err(format!("expected {} fields, got {}", HEADER.len(), rec.len()));
        }
        let field = |i: usize| &rec[i];
        let int = |i: usize| -> Result<usize, String> {
            field(i).parse().map_err(|_| format!("column {}: {:?} is not an integer", HEADER[i], field(i)))
        };
        let num = |i: usize| -> Result<f64, String> {
            field(i).parse().map_err(|_| format!("column {}: {:?} is not a number", HEADER[i], field(i)))
        };
        let opt_num = |i: usize| -> Result<Option<f64>, String> {
            if field(i).is_empty() { Ok(None) } else { num(i).map(Some) }
        };
        Ok(Self {
            mechanism: field(0).to_owned(),
            n: int(1)?,
            d: int(2)?,
            d_a: int(3)?,
            u: int(4)?,
            param: field(5).to_owned(),
            param_value: opt_num(6)?,
            epsilon: num(7)?,
            delta: num(8)?,
            cm_records: if field(9).is_empty() { None } else { Some(int(9)? as u64) },
            cp_accesses: opt_num(10)?,
            eps_empirical: opt_num(11)?,
            eps_ci_low: opt_num(12)?,
            eps_ci_high: opt_num(13)?,
            verdict: field(14).to_owned(),
        })
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file under the schema, rejecting any other header.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<Row>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(HEADER) {
        return Err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| e.to_string())?;
            Row::from_record(&rec).map_err(|e| format!("row {}: {e}", i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, 7.600902459542082, 3.552713678800501e-15, 0.9, 5.93e-4, 1e6, 2e20, f64::INFINITY] {
            let s = format_number(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_number(f64::INFINITY), "inf");
        assert_eq!(format_number(1000.0), "1000");
        assert_eq!(format_number(3.55e-15), "3.55e-15");
    }

    #[test]
    fn rows_round_trip() {
        let row = Row {
            mechanism: "sparse".into(),
            n: 16,
            d: 3,
            d_a: 2,
            u: 1,
            param: "theta".into(),
            param_value: Some(0.25),
            epsilon: f64::INFINITY,
            delta: 0.0,
            cm_records: Some(3),
            cp_accesses: Some(12.0),
            eps_empirical: Some(0.01),
            eps_ci_low: Some(-0.02),
            eps_ci_high: Some(0.04),
            verdict: "PASS".into(),
        };
        let empty = Row { param_value: None, cm_records: None, cp_accesses: None, eps_empirical: None, ..row.clone() };
        let mut buf = Vec::new();
        write_rows(&mut buf, &[row.clone(), empty.clone()]).unwrap();
        assert!(buf.starts_with(HEADER.join(",").as_bytes()));
        assert_eq!(read_rows(&buf[..]).unwrap(), vec![row, empty]);
        assert!(read_rows(&b"a,b\n1,2\n"[..]).is_err());
    }
}

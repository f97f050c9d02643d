//! Delimiter-separated decision tables with columns
//! `experiment_id,es,delta,verdict`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Verdict;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub experiment_id: String,
    pub es: f64,
    pub delta: f64,
    pub verdict: Verdict,
}

/// Format with `digits` significant digits in positional notation.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new digit (9.999995 → 10.00000)
    let rounded: f64 = s.parse().unwrap_or(x);
    let new_mag = rounded.abs().log10().floor() as i64;
    if rounded != 0.0 && new_mag > magnitude && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

pub fn write_decision_table<W: Write>(out: W, rows: &[DecisionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment_id", "es", "delta", "verdict"])?;
    for r in rows {
        w.write_record([
            r.experiment_id.as_str(),
            &fmt_sig(r.es, 6),
            &fmt_sig(r.delta, 6),
            r.verdict.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::Table(e.to_string()))?;
    Ok(())
}

pub fn read_decision_table<R: Read>(input: R) -> Result<Vec<DecisionRow>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Table(format!(
                "expected 4 columns, got {}",
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Table(format!("bad number {:?}", &rec[i])))
        };
        rows.push(DecisionRow {
            experiment_id: rec[0].to_string(),
            es: num(1)?,
            delta: num(2)?,
            verdict: rec[3].parse()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.029, 6), "0.0290000");
        assert_eq!(fmt_sig(-0.266, 6), "-0.266000");
        assert_eq!(fmt_sig(1.0, 6), "1.00000");
        assert_eq!(fmt_sig(123456.7, 6), "123457");
        assert_eq!(fmt_sig(9.999999, 6), "10.0000");
        assert_eq!(fmt_sig(0.0, 6), "0.00000");
    }

    proptest! {
        #[test]
        fn table_round_trip_keeps_six_digits(es in -3.0f64..3.0, delta in 0.001f64..1.0, v in 0usize..3) {
            let rows = vec![DecisionRow {
                experiment_id: "x,1".into(),
                es,
                delta,
                verdict: Verdict::ALL[v],
            }];
            let mut buf = Vec::new();
            write_decision_table(&mut buf, &rows).unwrap();
            let back = read_decision_table(buf.as_slice()).unwrap();
            prop_assert_eq!(&back[0].experiment_id, "x,1");
            prop_assert_eq!(back[0].verdict, rows[0].verdict);
            prop_assert!((back[0].es - es).abs() <= 5e-6 * es.abs().max(1e-3));
            prop_assert!((back[0].delta - delta).abs() <= 5e-6 * delta);
        }
    }
}

//! CPLEX-LP export of the pattern-selection integer program.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::AllocError;
use crate::domain::{BudgetMode, BudgetSpec};
use crate::ser::PatternCurve;

/// Terms per output line; keeps lines well below the 255-character limit
/// some readers impose.
const TERMS_PER_LINE: usize = 6;

fn var(c: &PatternCurve, t: usize) -> String {
    format!("w_{}_{}", c.provider_id, t)
}

fn write_terms<W: Write>(out: &mut W, terms: &[(f64, String)], precision: usize) -> io::Result<()> {
    for (i, (coef, name)) in terms.iter().enumerate() {
        if i > 0 && i % TERMS_PER_LINE == 0 {
            writeln!(out)?;
            write!(out, "   ")?;
        }
        let sign = if coef.is_sign_negative() { '-' } else { '+' };
        if i == 0 && sign == '+' {
            write!(out, " {:.*} {}", precision, coef.abs(), name)?;
        } else {
            write!(out, " {} {:.*} {}", sign, precision, coef.abs(), name)?;
        }
    }
    Ok(())
}

/// Writes the program: one binary `w_<provider>_<t>` per pattern, objective
/// `sum deltas[t] * w`, a budget row over pattern sizes and one convexity row
/// per provider.
pub fn write_lp<W: Write>(
    curves: &[PatternCurve],
    budget: BudgetSpec,
    out: &mut W,
) -> io::Result<()> {
    writeln!(
        out,
        "\\ coupon pattern selection: {} providers",
        curves.len()
    )?;
    writeln!(out, "Maximize")?;
    let objective: Vec<(f64, String)> = curves
        .iter()
        .flat_map(|c| {
            c.deltas
                .iter()
                .enumerate()
                .map(move |(t, &d)| (d, var(c, t)))
        })
        .collect();
    write!(out, " obj:")?;
    write_terms(out, &objective, 12)?;
    writeln!(out)?;

    writeln!(out, "Subject To")?;
    let sizes: Vec<(f64, String)> = curves
        .iter()
        .flat_map(|c| (0..c.deltas.len()).map(move |t| (t as f64, var(c, t))))
        .collect();
    write!(out, " budget:")?;
    write_terms(out, &sizes, 0)?;
    let relation = match budget.mode {
        BudgetMode::Exact => "=",
        BudgetMode::AtMost => "<=",
    };
    writeln!(out, " {} {}", relation, budget.n_coupons)?;
    for c in curves {
        let ones: Vec<(f64, String)> = (0..c.deltas.len()).map(|t| (1.0, var(c, t))).collect();
        write!(out, " choose_{}:", c.provider_id)?;
        write_terms(out, &ones, 0)?;
        writeln!(out, " = 1")?;
    }

    writeln!(out, "Binaries")?;
    for c in curves {
        let names: Vec<String> = (0..c.deltas.len()).map(|t| var(c, t)).collect();
        for chunk in names.chunks(TERMS_PER_LINE * 2) {
            writeln!(out, " {}", chunk.join(" "))?;
        }
    }
    writeln!(out, "End")?;
    Ok(())
}

pub fn export_ilp(
    curves: &[PatternCurve],
    budget: BudgetSpec,
    path: &Path,
) -> Result<(), AllocError> {
    let io_err = |source| AllocError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    write_lp(curves, budget, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

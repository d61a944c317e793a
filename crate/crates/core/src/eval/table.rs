use super::EvaluationRun;

/// `x` with two decimals, rounding half to even on its shortest decimal
/// representation: `0.945` gives `"0.94"`, `0.955` gives `"0.96"`.
pub fn format_fixed2(x: f64) -> String {
    if !x.is_finite() || x.abs() >= 1e30 {
        return format!("{x:.2}");
    }
    let s = format!("{}", x.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let digits: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
    let mut cents: u128 = int.parse::<u128>().expect("plain decimal") * 100
        + digits.first().copied().unwrap_or(0) as u128 * 10
        + digits.get(1).copied().unwrap_or(0) as u128;
    let rest = digits.get(2..).unwrap_or(&[]);
    let round_up = match rest.first() {
        None => false,
        Some(&d) if d > 5 => true,
        Some(&d) if d < 5 => false,
        Some(_) if rest[1..].iter().any(|&d| d != 0) => true,
        Some(_) => cents % 2 == 1,
    };
    if round_up {
        cents += 1;
    }
    let sign = if x < 0.0 && cents != 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}

/// Plain-text table with one row per run: strategy, VA and AUC.
pub fn report_table(runs: &[EvaluationRun]) -> String {
    let width = runs.iter().map(|r| r.strategy.len()).max().unwrap_or(0).max("strategy".len());
    let mut out = format!("{:<width$}  {:>4}  {:>4}\n", "strategy", "VA", "AUC");
    for r in runs {
        let (va, auc) = match r.metrics {
            Some(m) => (format_fixed2(m.verification_accuracy), format_fixed2(m.auc)),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!("{:<width$}  {va:>4}  {auc:>4}\n", r.strategy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{EvalOptions, Metrics};

    #[test]
    fn half_to_even() {
        assert_eq!(format_fixed2(0.945), "0.94");
        assert_eq!(format_fixed2(0.955), "0.96");
        assert_eq!(format_fixed2(0.9451), "0.95");
        assert_eq!(format_fixed2(1.0), "1.00");
        assert_eq!(format_fixed2(0.0), "0.00");
        assert_eq!(format_fixed2(0.125), "0.12");
        assert_eq!(format_fixed2(0.999), "1.00");
        assert_eq!(format_fixed2(-0.001), "0.00");
        assert_eq!(format_fixed2(-0.5), "-0.50");
        assert_eq!(format_fixed2(1.0 / 3.0), "0.33");
    }

    fn run(strategy: &str, metrics: Option<Metrics>) -> EvaluationRun {
        EvaluationRun {
            strategy: strategy.into(),
            seed: 0,
            dataset_size: 0,
            excluded: 0,
            metrics,
            options: EvalOptions::default(),
            pairs: vec![],
            exclusions: vec![],
        }
    }

    #[test]
    fn table_rows() {
        assert_eq!(report_table(&[]), "strategy    VA   AUC\n");
        let t = report_table(&[run("random-person", Some(Metrics { verification_accuracy: 1.0, auc: 1.0 }))]);
        assert!(t.lines().nth(1).unwrap().ends_with("1.00  1.00"), "{t}");
        let t = report_table(&[run("esp", None)]);
        assert!(t.lines().nth(1).unwrap().ends_with("-     -"), "{t}");
    }
}

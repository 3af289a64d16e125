//! Flag-value parsers: monotone masks and lambda grids.

use ordscale::select::default_lambda_grid;

/// Parses a monotone mask against the variable names.
///
/// Accepted forms: `all`, `none`, or a comma-separated list of tokens where
/// each token is a variable name, a `prefix*` glob, a 1-based index, or an
/// index range `a-b`.
pub fn parse_monotone_mask(spec: &str, names: &[String]) -> Result<Vec<bool>, String> {
    let p = names.len();
    match spec.trim() {
        "all" => return Ok(vec![true; p]),
        "none" | "" => return Ok(vec![false; p]),
        _ => {}
    }
    let mut mask = vec![false; p];
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some(prefix) = token.strip_suffix('*') {
            let mut hit = false;
            for (j, name) in names.iter().enumerate() {
                if name.starts_with(prefix) {
                    mask[j] = true;
                    hit = true;
                }
            }
            if !hit {
                return Err(format!("monotone token '{token}' matches no variable"));
            }
            continue;
        }
        if let Some((lo, hi)) = token.split_once('-') {
            if let (Ok(lo), Ok(hi)) = (lo.parse::<usize>(), hi.parse::<usize>()) {
                if lo < 1 || hi > p || lo > hi {
                    return Err(format!("monotone range '{token}' out of 1..={p}"));
                }
                for j in lo..=hi {
                    mask[j - 1] = true;
                }
                continue;
            }
        }
        if let Ok(idx) = token.parse::<usize>() {
            if idx < 1 || idx > p {
                return Err(format!("monotone index '{token}' out of 1..={p}"));
            }
            mask[idx - 1] = true;
            continue;
        }
        match names.iter().position(|n| n == token) {
            Some(j) => mask[j] = true,
            None => return Err(format!("monotone token '{token}' matches no variable")),
        }
    }
    Ok(mask)
}

/// Parses a lambda grid specification: `default`, `log:<lo>:<hi>:<count>`,
/// a comma-separated list of values, or `@file` with one value per line.
/// The result is sorted ascending and deduplicated.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    let mut grid: Vec<f64> = if spec == "default" {
        default_lambda_grid()
    } else if let Some(rest) = spec.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err("log grid must be log:<lo>:<hi>:<count>".into());
        }
        let lo: f64 = parts[0].parse().map_err(|_| "bad log grid lower bound")?;
        let hi: f64 = parts[1].parse().map_err(|_| "bad log grid upper bound")?;
        let count: usize = parts[2].parse().map_err(|_| "bad log grid count")?;
        if !(lo > 0.0) || !(hi > lo) || count < 2 {
            return Err("log grid needs 0 < lo < hi and count >= 2".into());
        }
        (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                10f64.powf(lo.log10() + t * (hi.log10() - lo.log10()))
            })
            .collect()
    } else if let Some(path) = spec.strip_prefix('@') {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read grid file '{path}': {e}"))?;
        let mut values = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|_| format!("bad grid value '{line}'"))?,
            );
        }
        values
    } else {
        let mut values = Vec::new();
        for part in spec.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            values.push(
                part.parse::<f64>()
                    .map_err(|_| format!("bad grid value '{part}'"))?,
            );
        }
        values
    };

    if grid.is_empty() {
        return Err("lambda grid is empty".into());
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("lambda values must be finite and non-negative".into());
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid.dedup();
    Ok(grid)
}

/// Parses a comma-separated list of lambda values (order preserved).
pub fn parse_lambda_list(spec: &str) -> Result<Vec<f64>, String> {
    let mut values = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v: f64 = part
            .parse()
            .map_err(|_| format!("bad lambda value '{part}'"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("lambda '{part}' must be finite and non-negative"));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err("no lambda values given".into());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec![
            "b1130".into(),
            "b280".into(),
            "d450".into(),
            "e1101".into(),
            "e310".into(),
        ]
    }

    #[test]
    fn mask_keywords() {
        assert_eq!(parse_monotone_mask("all", &names()).unwrap(), vec![true; 5]);
        assert_eq!(parse_monotone_mask("none", &names()).unwrap(), vec![false; 5]);
    }

    #[test]
    fn mask_prefix_glob_selects_families() {
        let mask = parse_monotone_mask("b*,d*", &names()).unwrap();
        assert_eq!(mask, vec![true, true, true, false, false]);
    }

    #[test]
    fn mask_names_indices_and_ranges() {
        let mask = parse_monotone_mask("b280,4-5", &names()).unwrap();
        assert_eq!(mask, vec![false, true, false, true, true]);
        assert!(parse_monotone_mask("nosuch", &names()).is_err());
        assert!(parse_monotone_mask("9", &names()).is_err());
    }

    #[test]
    fn grids_parse_and_sort() {
        assert_eq!(parse_grid("1,0.5,2").unwrap(), vec![0.5, 1.0, 2.0]);
        let log = parse_grid("log:0.01:100:5").unwrap();
        assert_eq!(log.len(), 5);
        assert!((log[0] - 0.01).abs() < 1e-12);
        assert!((log[4] - 100.0).abs() < 1e-9);
        assert!(parse_grid("default").unwrap().len() == 27);
        assert!(parse_grid("-1,2").is_err());
        assert!(parse_grid("").is_err());
    }
}

//! Hyperparameter sweep grids: `k1=10:30:2` ranges and `lambda=0,0.3,1`
//! lists, expanded to a cartesian product in flag order.

use anyhow::Result;

use kre_core::RerankParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K1,
    K2,
    Lambda,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    param: SweepParam,
    values: Vec<f64>,
}

impl SweepSpec {
    /// Parses `name=start:stop:step` (inclusive stop, within a relative step
    /// epsilon) or `name=v1,v2,...`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let (name, rest) = text
            .split_once('=')
            .ok_or_else(|| format!("sweep spec `{text}` missing `=`"))?;
        let param = match name.trim() {
            "k1" => SweepParam::K1,
            "k2" => SweepParam::K2,
            "lambda" => SweepParam::Lambda,
            other => return Err(format!("unknown sweep parameter `{other}`")),
        };
        let values = if rest.contains(':') {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(format!("range `{rest}` must be start:stop:step"));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad number `{s}` in `{text}`"))
            };
            let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
            if step <= 0.0 || stop < start {
                return Err(format!("range `{rest}` must ascend with a positive step"));
            }
            // snap to the grid's decimal precision so 0.2 + 0.1 reads 0.3,
            // exactly what `--lambda 0.3` would parse to
            let decimals = |s: &str| s.trim().split('.').nth(1).map_or(0, str::len) as i32;
            let scale = 10f64.powi(decimals(parts[0]).max(decimals(parts[2])));
            let mut values = Vec::new();
            let mut i = 0u32;
            loop {
                let v = ((start + f64::from(i) * step) * scale).round() / scale;
                if v > stop + step * 1e-9 {
                    break;
                }
                values.push(v);
                i += 1;
            }
            values
        } else {
            rest.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("bad number `{s}` in `{text}`"))
                })
                .collect::<std::result::Result<_, _>>()?
        };
        if values.is_empty() {
            return Err(format!("sweep spec `{text}` produced no values"));
        }
        let spec = Self { param, values };
        for &v in &spec.values {
            spec.check(v)?;
        }
        Ok(spec)
    }

    fn check(&self, value: f64) -> std::result::Result<(), String> {
        match self.param {
            SweepParam::K1 | SweepParam::K2 => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(format!(
                        "{} values must be positive integers, got {value}",
                        self.name()
                    ));
                }
            }
            SweepParam::Lambda => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(format!("lambda values must lie in [0, 1], got {value}"));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.param {
            SweepParam::K1 => "k1",
            SweepParam::K2 => "k2",
            SweepParam::Lambda => "lambda",
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn apply(&self, value: f64, params: &mut RerankParams) -> Result<()> {
        match self.param {
            SweepParam::K1 => params.k1 = value as usize,
            SweepParam::K2 => params.k2 = value as usize,
            SweepParam::Lambda => params.lambda = value,
        }
        Ok(())
    }

    pub fn format(&self, value: f64) -> String {
        match self.param {
            SweepParam::K1 | SweepParam::K2 => format!("{}", value as usize),
            SweepParam::Lambda => format!("{value}"),
        }
    }
}

/// Row-major cartesian product of the sweep values, first flag outermost.
pub fn cartesian(specs: &[SweepSpec]) -> Vec<Vec<f64>> {
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for spec in specs {
        let mut next = Vec::with_capacity(combos.len() * spec.values().len());
        for combo in &combos {
            for &v in spec.values() {
                let mut c = combo.clone();
                c.push(v);
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_spec_is_inclusive_of_the_stop() {
        let spec = SweepSpec::parse("lambda=0:1:0.1").unwrap();
        assert_eq!(spec.values().len(), 11);
        assert_eq!(spec.values()[0], 0.0);
        assert!((spec.values()[10] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn integer_ranges_parse_for_k1() {
        let spec = SweepSpec::parse("k1=10:30:2").unwrap();
        assert_eq!(spec.values().len(), 11);
        assert_eq!(spec.format(spec.values()[0]), "10");
    }

    #[test]
    fn list_spec_parses() {
        let spec = SweepSpec::parse("k2=2,4,6").unwrap();
        assert_eq!(spec.values(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(SweepSpec::parse("k3=1:2:1").is_err());
        assert!(SweepSpec::parse("k1=1.5,2").is_err());
        assert!(SweepSpec::parse("lambda=0:2:0.5").is_err());
        assert!(SweepSpec::parse("k1").is_err());
        assert!(SweepSpec::parse("k1=5:1:1").is_err());
        assert!(SweepSpec::parse("k1=1:5:0").is_err());
    }

    #[test]
    fn cartesian_product_is_row_major() {
        let specs = vec![
            SweepSpec::parse("k1=1,2").unwrap(),
            SweepSpec::parse("lambda=0,1").unwrap(),
        ];
        let combos = cartesian(&specs);
        assert_eq!(
            combos,
            vec![
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![2.0, 0.0],
                vec![2.0, 1.0],
            ]
        );
    }
}

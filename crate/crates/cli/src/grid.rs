//! Node-count grids such as `2..1024:pow2`, `2..32`, `2..32:4` or `2,3,5,8`.

use crate::error::CliError;

pub fn parse_grid(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::config(format!("bad node grid `{spec}` (try `2..1024:pow2`, `2..32`, `2..32:2` or `2,4,8`)"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let out: Vec<usize> = if let Some((range, rest)) = spec.split_once("..") {
        let lo = num(range)?;
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, Some(step.trim())),
            None => (num(rest)?, None),
        };
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        match step {
            Some("pow2") => std::iter::successors(Some(lo.next_power_of_two()), |&p| p.checked_mul(2))
                .take_while(|&p| p <= hi)
                .collect(),
            Some(s) => {
                let step = num(s)?;
                if step == 0 {
                    return Err(bad());
                }
                (lo..=hi).step_by(step).collect()
            }
            None => (lo..=hi).collect(),
        }
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    Ok(out)
}

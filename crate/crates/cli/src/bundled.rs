//! Plans shipped with the binary, addressable by name.

use std::path::Path;

use crate::{CliError, CliResult};

pub const PLANS: &[(&str, &str)] = &[
    (
        "table1_strong_desk",
        include_str!("../configs/table1_strong_desk.toml"),
    ),
    (
        "table1_strong_clr_desk",
        include_str!("../configs/table1_strong_clr_desk.toml"),
    ),
    (
        "table1_weak_desk",
        include_str!("../configs/table1_weak_desk.toml"),
    ),
    (
        "table2_weak_desk",
        include_str!("../configs/table2_weak_desk.toml"),
    ),
    (
        "figure1_power_desk",
        include_str!("../configs/figure1_power_desk.toml"),
    ),
    ("power_strong", include_str!("../configs/power_strong.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    PLANS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Plan text for `arg`: an existing file wins over a bundled name.
pub fn resolve(arg: &str) -> CliResult<String> {
    let path = Path::new(arg);
    if path.is_file() {
        return std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {arg}: {e}")));
    }
    bundled(arg).map(str::to_owned).ok_or_else(|| {
        let names: Vec<&str> = PLANS.iter().map(|(n, _)| *n).collect();
        CliError::usage(format!(
            "{arg} is neither a readable file nor a bundled plan ({})",
            names.join(", ")
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use robust_iv::simulation::{parse_plan, parse_power_plan};

    #[test]
    fn bundled_plans_parse() {
        for (name, text) in PLANS {
            let ok = if name.starts_with("power") {
                parse_power_plan(text).is_ok()
            } else {
                parse_plan(text).is_ok()
            };
            assert!(ok, "{name}");
        }
    }

    #[test]
    fn unknown_name() {
        assert_eq!(resolve("no_such_plan").unwrap_err().code, crate::EXIT_USAGE);
    }
}

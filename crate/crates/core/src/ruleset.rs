//! DNF rule sets read out of a trained network.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_codec::BinFeatureMap;
use crate::network::DrNet;

const RULESET_FORMAT: &str = "drnet-rules";
const RULESET_VERSION: u32 = 1;

/// A binary feature, or its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: usize,
    pub negated: bool,
}

impl Predicate {
    pub fn holds(&self, x: &[u8]) -> bool {
        (x[self.feature] != 0) != self.negated
    }
}

/// A conjunction of predicates sorted by feature index. An empty rule is
/// always true.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub predicates: Vec<Predicate>,
}

impl Rule {
    pub fn new(mut predicates: Vec<Predicate>) -> Result<Self> {
        predicates.sort();
        if predicates.windows(2).any(|w| w[0].feature == w[1].feature) {
            return Err(Error::Invalid("rule mentions a feature twice".into()));
        }
        Ok(Rule { predicates })
    }

    pub fn is_always_true(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn matches(&self, x: &[u8]) -> bool {
        self.predicates.iter().all(|p| p.holds(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub map: BinFeatureMap,
}

/// Rule and predicate counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub num_rules: usize,
    pub total_predicates: usize,
    /// Rules plus predicates.
    pub model_complexity: usize,
    /// Mean predicates per rule; 0 with no rules.
    pub rule_complexity: f64,
}

#[derive(Serialize, Deserialize)]
struct RuleSetFile {
    format: String,
    version: u32,
    features: BinFeatureMap,
    rules: Vec<Vec<Predicate>>,
}

/// Extraction output: the rule set plus any warnings raised on the way.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub rules: RuleSet,
    pub warnings: Vec<String>,
}

/// Reads the evaluation-mode network as a rule set: one rule per neuron the
/// OR Layer selects, with positive weights as features and negative weights
/// as negations. Identical rules are kept once, in neuron order.
pub fn extract(net: &DrNet, map: &BinFeatureMap) -> Result<Extraction> {
    if map.len() != net.d {
        return Err(Error::Dimension { what: "feature map", expected: net.d, got: map.len() });
    }
    let weights = net.eval_rule_weights();
    let selectors = net.eval_or_selectors();
    let mut seen = HashSet::new();
    let mut rules = Vec::new();
    let mut warnings = Vec::new();
    for (j, &sel) in selectors.iter().enumerate() {
        if sel <= 0.0 {
            continue;
        }
        let predicates = weights[j * net.d..(j + 1) * net.d]
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| Predicate { feature: i, negated: w < 0.0 })
            .collect();
        let rule = Rule { predicates };
        if rule.is_always_true() {
            warnings.push(format!("neuron {j} is selected with no predicates: the rule set always predicts positive"));
        }
        if seen.insert(rule.clone()) {
            rules.push(rule);
        }
    }
    Ok(Extraction { rules: RuleSet { rules, map: map.clone() }, warnings })
}

impl RuleSet {
    pub fn d(&self) -> usize {
        self.map.len()
    }

    /// 1 iff some rule matches.
    pub fn eval(&self, x: &[u8]) -> Result<u8> {
        if x.len() != self.d() {
            return Err(Error::Dimension { what: "input width", expected: self.d(), got: x.len() });
        }
        Ok(self.rules.iter().any(|r| r.matches(x)) as u8)
    }

    pub fn complexity(&self) -> ComplexityReport {
        let num_rules = self.rules.len();
        let total_predicates = self.rules.iter().map(|r| r.predicates.len()).sum();
        ComplexityReport {
            num_rules,
            total_predicates,
            model_complexity: num_rules + total_predicates,
            rule_complexity: if num_rules == 0 { 0.0 } else { total_predicates as f64 / num_rules as f64 },
        }
    }

    pub fn has_always_true_rule(&self) -> bool {
        self.rules.iter().any(Rule::is_always_true)
    }

    pub fn render_predicate(&self, p: &Predicate) -> Result<String> {
        let feature = self
            .map
            .entries
            .get(p.feature)
            .ok_or_else(|| Error::Invalid(format!("predicate refers to feature {} of {}", p.feature, self.d())))?;
        Ok(feature.describe(p.negated))
    }

    pub fn render_rule(&self, rule: &Rule) -> Result<String> {
        if rule.is_always_true() {
            return Ok("(TRUE)".to_owned());
        }
        let parts = rule
            .predicates
            .iter()
            .map(|p| Ok(format!("({})", self.render_predicate(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.join(" AND "))
    }

    /// IF/THEN block, one rule per line.
    pub fn render(&self) -> Result<String> {
        let outcome = match &self.map.target {
            Some(t) => format!("{} = {}", t.column, t.positive),
            None => "positive".to_owned(),
        };
        let mut out = String::new();
        if self.rules.is_empty() {
            let _ = writeln!(out, "IF   (FALSE)");
        }
        for (k, rule) in self.rules.iter().enumerate() {
            let lead = if k == 0 { "IF  " } else { "    " };
            let tail = if k + 1 < self.rules.len() { " OR" } else { "" };
            let _ = writeln!(out, "{lead} {}{tail}", self.render_rule(rule)?);
        }
        let _ = writeln!(out, "THEN {outcome}");
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let file = RuleSetFile {
            format: RULESET_FORMAT.to_owned(),
            version: RULESET_VERSION,
            features: self.map.clone(),
            rules: self.rules.iter().map(|r| r.predicates.clone()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("rule set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RuleSetFile = serde_json::from_str(text)?;
        if file.format != RULESET_FORMAT {
            return Err(Error::Malformed { what: "rule set", reason: format!("unknown format tag `{}`", file.format) });
        }
        if file.version != RULESET_VERSION {
            return Err(Error::Version { what: "rule set", found: file.version, expected: RULESET_VERSION });
        }
        let d = file.features.len();
        let rules = file
            .rules
            .into_iter()
            .map(|preds| {
                if let Some(p) = preds.iter().find(|p| p.feature >= d) {
                    return Err(Error::Malformed {
                        what: "rule set",
                        reason: format!("feature index {} out of range {d}", p.feature),
                    });
                }
                Rule::new(preds)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RuleSet { rules, map: file.features })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_codec::{BinFeature, FeatureTest};
    use crate::gates::{GateBank, HardConcrete};

    fn pos(feature: usize) -> Predicate {
        Predicate { feature, negated: false }
    }

    fn neg(feature: usize) -> Predicate {
        Predicate { feature, negated: true }
    }

    fn net(weights: Vec<f64>, or_log_alpha: Vec<f64>, d: usize) -> DrNet {
        let dist = HardConcrete::default();
        let m = or_log_alpha.len();
        DrNet::from_parts(m, d, weights, GateBank::new(vec![10.0; m * d], dist), GateBank::new(or_log_alpha, dist), 0.5)
            .unwrap()
    }

    #[test]
    fn extract_examples() {
        let map = BinFeatureMap::identity(&["x1", "x2", "x3"]);
        // log_alpha 1.0 gives a deterministic OR gate near 0.78.
        let one = extract(&net(vec![1.2, -0.7, 0.0], vec![1.0], 3), &map).unwrap();
        assert_eq!(one.rules.rules, vec![Rule { predicates: vec![pos(0), neg(1)] }]);
        assert!(one.warnings.is_empty());

        let masked = extract(&net(vec![1.2, -0.7, 0.0], vec![-10.0], 3), &map).unwrap();
        assert!(masked.rules.rules.is_empty());

        let dup = extract(&net(vec![1.2, -0.7, 0.0, 0.4, -2.0, 0.0], vec![5.0, 5.0], 3), &map).unwrap();
        assert_eq!(dup.rules.rules.len(), 1);

        let empty = extract(&net(vec![0.0; 3], vec![5.0], 3), &map).unwrap();
        assert!(empty.rules.has_always_true_rule());
        assert_eq!(empty.warnings.len(), 1);
    }

    #[test]
    fn eval_examples() {
        let rs = RuleSet {
            rules: vec![Rule { predicates: vec![pos(0), neg(1)] }],
            map: BinFeatureMap::identity(&["a", "b", "c"]),
        };
        assert_eq!(rs.eval(&[1, 0, 0]).unwrap(), 1);
        assert_eq!(rs.eval(&[1, 1, 0]).unwrap(), 0);
        assert!(rs.eval(&[1, 1]).is_err());
        let none = RuleSet { rules: vec![], ..rs.clone() };
        assert_eq!(none.eval(&[1, 0, 0]).unwrap(), 0);
        let always = RuleSet { rules: vec![Rule { predicates: vec![] }], ..rs };
        assert_eq!(always.eval(&[0, 1, 1]).unwrap(), 1);
    }

    #[test]
    fn complexity_examples() {
        // IF (age <= 50) OR (NOT smoker) OR (cholesterol <= 130 AND bp <= 120)
        let rs = RuleSet {
            rules: vec![
                Rule { predicates: vec![pos(0)] },
                Rule { predicates: vec![neg(1)] },
                Rule { predicates: vec![pos(2), pos(3)] },
            ],
            map: BinFeatureMap::identity(&["age<=50", "smoker", "chol<=130", "bp<=120"]),
        };
        let c = rs.complexity();
        assert_eq!((c.num_rules, c.total_predicates, c.model_complexity), (3, 4, 7));
        assert!((c.rule_complexity - 4.0 / 3.0).abs() < 1e-15);

        let empty = RuleSet { rules: vec![], map: rs.map.clone() };
        assert_eq!(
            empty.complexity(),
            ComplexityReport { num_rules: 0, total_predicates: 0, model_complexity: 0, rule_complexity: 0.0 }
        );

        let five = RuleSet {
            rules: vec![Rule { predicates: (0..5).map(pos).collect() }],
            map: BinFeatureMap::identity(&["a", "b", "c", "d", "e"]),
        };
        let c = five.complexity();
        assert_eq!((c.model_complexity, c.rule_complexity), (6, 5.0));
    }

    fn mixed_map() -> BinFeatureMap {
        let mut map = BinFeatureMap::identity(&["smoker"]);
        for c in ["red", "blue"] {
            map.entries.push(BinFeature {
                column: "color".into(),
                test: FeatureTest::Equals { value: c.into() },
                label: format!("color = {c}"),
            });
        }
        map.entries.push(BinFeature {
            column: "age".into(),
            test: FeatureTest::Leq { threshold: 50.0 },
            label: "age ≤ 50".into(),
        });
        map
    }

    #[test]
    fn render_examples() {
        let rs = RuleSet {
            rules: vec![
                Rule { predicates: vec![neg(3)] },
                Rule { predicates: vec![pos(1), neg(2)] },
                Rule { predicates: vec![neg(0)] },
                Rule { predicates: vec![] },
            ],
            map: mixed_map(),
        };
        assert_eq!(rs.render_predicate(&neg(3)).unwrap(), "age > 50");
        assert_eq!(rs.render_rule(&rs.rules[1]).unwrap(), "(color = red) AND (color ≠ blue)");
        assert_eq!(rs.render_rule(&rs.rules[2]).unwrap(), "(NOT smoker)");
        assert_eq!(rs.render_rule(&rs.rules[3]).unwrap(), "(TRUE)");
        let text = rs.render().unwrap();
        assert_eq!(
            text,
            "IF   (age > 50) OR\n     (color = red) AND (color ≠ blue) OR\n     (NOT smoker) OR\n     (TRUE)\nTHEN positive\n"
        );
        assert!(rs.render_predicate(&pos(9)).is_err());
    }

    #[test]
    fn serialization_checks_version_and_indices() {
        let rs = RuleSet { rules: vec![Rule { predicates: vec![pos(1), neg(2)] }], map: mixed_map() };
        assert_eq!(RuleSet::from_json(&rs.to_json()).unwrap(), rs);
        let empty = RuleSet { rules: vec![], map: mixed_map() };
        assert_eq!(RuleSet::from_json(&empty.to_json()).unwrap(), empty);

        let bumped = rs.to_json().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(RuleSet::from_json(&bumped), Err(Error::Version { found: 2, .. })));
        let dangling = rs.to_json().replace("\"feature\": 2", "\"feature\": 40");
        assert!(matches!(RuleSet::from_json(&dangling), Err(Error::Malformed { .. })));
        assert!(RuleSet::from_json("{").is_err());
    }
}

//! Reference metadata shipped with the crate: the ETF class/category
//! taxonomy and the two-digit SIC major groups.

use std::collections::BTreeMap;
use std::sync::OnceLock;

const ETF_TAXONOMY_CSV: &str = include_str!("../data/etf_taxonomy.csv");
const SIC_GROUPS_CSV: &str = include_str!("../data/sic_major_groups.csv");

/// One ETF category (subclass) and the big class it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtfCategory {
    pub class: String,
    pub category: String,
}

/// A two-digit SIC major group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SicGroup {
    pub group: u8,
    pub division: char,
    pub name: String,
}

fn parse_rows(src: &str) -> Vec<csv::StringRecord> {
    let mut rdr = csv::Reader::from_reader(src.as_bytes());
    rdr.records()
        .map(|r| r.expect("embedded reference table is valid csv"))
        .collect()
}

/// All 73 ETF categories, grouped under 10 classes, in table order.
pub fn etf_categories() -> &'static [EtfCategory] {
    static TABLE: OnceLock<Vec<EtfCategory>> = OnceLock::new();
    TABLE.get_or_init(|| {
        parse_rows(ETF_TAXONOMY_CSV)
            .into_iter()
            .map(|r| EtfCategory {
                class: r[0].to_string(),
                category: r[1].to_string(),
            })
            .collect()
    })
}

/// The ten ETF classes in table order.
pub fn etf_classes() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for c in etf_categories() {
        if !out.contains(&c.class.as_str()) {
            out.push(&c.class);
        }
    }
    out
}

/// Class of a category, if the category is in the taxonomy.
pub fn class_of_category(category: &str) -> Option<&'static str> {
    static INDEX: OnceLock<BTreeMap<&'static str, &'static str>> = OnceLock::new();
    INDEX
        .get_or_init(|| {
            etf_categories()
                .iter()
                .map(|c| (c.category.as_str(), c.class.as_str()))
                .collect()
        })
        .get(category)
        .copied()
}

pub fn sic_groups() -> &'static [SicGroup] {
    static TABLE: OnceLock<Vec<SicGroup>> = OnceLock::new();
    TABLE.get_or_init(|| {
        parse_rows(SIC_GROUPS_CSV)
            .into_iter()
            .map(|r| SicGroup {
                group: r[0].parse().expect("two-digit group"),
                division: r[1].chars().next().expect("division letter"),
                name: r[2].to_string(),
            })
            .collect()
    })
}

pub fn sic_group(group: u8) -> Option<&'static SicGroup> {
    sic_groups().iter().find(|g| g.group == group)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_has_ten_classes_and_73_categories() {
        assert_eq!(etf_categories().len(), 73);
        assert_eq!(etf_classes().len(), 10);
        assert_eq!(class_of_category("Money Market"), Some("Bond/Fixed Income"));
        assert_eq!(class_of_category("Inverse Equities"), Some("Inverse"));
        assert_eq!(class_of_category("Not A Category"), None);
    }

    #[test]
    fn sic_groups_load() {
        assert_eq!(sic_groups().len(), 83);
        assert_eq!(sic_group(73).unwrap().name, "Business Services");
        assert_eq!(sic_group(60).unwrap().division, 'H');
        assert!(sic_group(3).is_none());
    }
}

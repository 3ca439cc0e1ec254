use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Doculect, Lexicon, Macroarea};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    Macroarea,
    Family,
}

impl fmt::Display for FoldScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldScheme::Macroarea => "macroarea",
            FoldScheme::Family => "family",
        })
    }
}

impl FromStr for FoldScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macroarea" => Ok(FoldScheme::Macroarea),
            "family" => Ok(FoldScheme::Family),
            other => Err(Error::config(format!("unknown fold scheme {other:?}"))),
        }
    }
}

/// One train/validation/test partition of the doculects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_groups: Vec<String>,
    pub validation_group: String,
    pub test_group: String,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub scheme: FoldScheme,
    pub folds: Vec<Fold>,
}

/// Train, validation and test groups of the four macroarea folds.
const MACROAREA_ROTATION: [([Macroarea; 2], Macroarea, Macroarea); 4] = [
    (
        [Macroarea::Pacific, Macroarea::Americas],
        Macroarea::Eurasia,
        Macroarea::Africa,
    ),
    (
        [Macroarea::Eurasia, Macroarea::Africa],
        Macroarea::Pacific,
        Macroarea::Americas,
    ),
    (
        [Macroarea::Africa, Macroarea::Pacific],
        Macroarea::Americas,
        Macroarea::Eurasia,
    ),
    (
        [Macroarea::Americas, Macroarea::Eurasia],
        Macroarea::Africa,
        Macroarea::Pacific,
    ),
];

/// Maps each family to the macroareas its doculects fall in.
pub fn family_macroareas(lex: &Lexicon) -> BTreeMap<&str, BTreeSet<Macroarea>> {
    let mut out: BTreeMap<&str, BTreeSet<Macroarea>> = BTreeMap::new();
    for d in &lex.doculects {
        out.entry(d.family.as_str()).or_default().insert(d.macroarea);
    }
    out
}

/// Moves every doculect of a family into the macroarea holding most of that
/// family's doculects. Ties go to the earliest macroarea in
/// Africa < Americas < Eurasia < Pacific order.
pub fn reassign_families_to_macroareas(mut lex: Lexicon) -> Lexicon {
    let mut counts: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for d in &lex.doculects {
        counts.entry(d.family.clone()).or_default()[d.macroarea.index()] += 1;
    }
    let majority: BTreeMap<String, Macroarea> = counts
        .into_iter()
        .map(|(fam, c)| {
            let best = Macroarea::ALL
                .into_iter()
                .max_by(|a, b| c[a.index()].cmp(&c[b.index()]).then(b.cmp(a)))
                .expect("four macroareas");
            (fam, best)
        })
        .collect();
    for d in &mut lex.doculects {
        d.macroarea = majority[&d.family];
    }
    lex
}

pub fn make_folds(lex: &Lexicon, scheme: FoldScheme, seed: u64) -> Result<FoldAssignment> {
    match scheme {
        FoldScheme::Macroarea => macroarea_folds(lex),
        FoldScheme::Family => family_folds(lex, seed),
    }
}

fn macroarea_folds(lex: &Lexicon) -> Result<FoldAssignment> {
    for (fam, areas) in family_macroareas(lex) {
        if areas.len() > 1 {
            return Err(Error::data(format!(
                "family {fam} spans {areas:?}; reassign families to macroareas first"
            )));
        }
    }
    let members = |m: Macroarea| -> Vec<String> {
        lex.doculects
            .iter()
            .filter(|d| d.macroarea == m)
            .map(|d| d.doculect_id.clone())
            .collect()
    };
    for m in Macroarea::ALL {
        if members(m).is_empty() {
            return Err(Error::data(format!("macroarea {m} has no doculects")));
        }
    }
    let folds = MACROAREA_ROTATION
        .iter()
        .enumerate()
        .map(|(index, (train, val, test))| Fold {
            index,
            train_groups: train.iter().map(|m| m.to_string()).collect(),
            validation_group: val.to_string(),
            test_group: test.to_string(),
            train: lex
                .doculects
                .iter()
                .filter(|d| train.contains(&d.macroarea))
                .map(|d| d.doculect_id.clone())
                .collect(),
            validation: members(*val),
            test: members(*test),
        })
        .collect();
    Ok(FoldAssignment {
        scheme: FoldScheme::Macroarea,
        folds,
    })
}

/// Families are shuffled, then placed largest-first into whichever of four
/// groups currently holds the fewest doculects. Fold `i` tests on group `i`,
/// validates on group `i+1` and trains on the remaining two.
fn family_folds(lex: &Lexicon, seed: u64) -> Result<FoldAssignment> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &lex.doculects {
        *sizes.entry(d.family.as_str()).or_default() += 1;
    }
    if sizes.len() < 4 {
        return Err(Error::data(format!(
            "family folds need at least 4 families, found {}",
            sizes.len()
        )));
    }
    let mut families: Vec<(&str, usize)> = sizes.into_iter().collect();
    families.shuffle(&mut rng::derived(seed, "family-folds"));
    families.sort_by(|a, b| b.1.cmp(&a.1));
    let mut load = [0usize; 4];
    let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (fam, n) in families {
        let g = (0..4).min_by_key(|&g| (load[g], g)).expect("four groups");
        load[g] += n;
        group_of.insert(fam, g);
    }
    let ids_in = |g: usize| -> Vec<String> {
        lex.doculects
            .iter()
            .filter(|d| group_of[d.family.as_str()] == g)
            .map(|d| d.doculect_id.clone())
            .collect()
    };
    let name = |g: usize| format!("group{}", g + 1);
    let folds = (0..4)
        .map(|i| {
            let test = i;
            let val = (i + 1) % 4;
            let train: Vec<usize> = (0..4).filter(|&g| g != test && g != val).collect();
            Fold {
                index: i,
                train_groups: train.iter().map(|&g| name(g)).collect(),
                validation_group: name(val),
                test_group: name(test),
                train: lex
                    .doculects
                    .iter()
                    .filter(|d| train.contains(&group_of[d.family.as_str()]))
                    .map(|d| d.doculect_id.clone())
                    .collect(),
                validation: ids_in(val),
                test: ids_in(test),
            }
        })
        .collect();
    Ok(FoldAssignment {
        scheme: FoldScheme::Family,
        folds,
    })
}

/// Inverse family size, kept as an exact fraction so per-family totals can be
/// checked without rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FamilyWeight {
    pub family_size: u64,
}

impl FamilyWeight {
    pub fn value(self) -> f64 {
        1.0 / self.family_size as f64
    }

    pub fn exact(self) -> Ratio<u64> {
        Ratio::new(1, self.family_size)
    }
}

/// Weight of each doculect = 1 / (number of doculects of its family in the
/// given set).
pub fn family_weights<'a>(
    doculects: impl IntoIterator<Item = &'a Doculect>,
) -> BTreeMap<String, FamilyWeight> {
    let doculects: Vec<&Doculect> = doculects.into_iter().collect();
    let mut sizes: BTreeMap<&str, u64> = BTreeMap::new();
    for d in &doculects {
        *sizes.entry(d.family.as_str()).or_default() += 1;
    }
    doculects
        .iter()
        .map(|d| {
            (
                d.doculect_id.clone(),
                FamilyWeight {
                    family_size: sizes[d.family.as_str()],
                },
            )
        })
        .collect()
}

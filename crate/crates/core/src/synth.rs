//! Synthetic listing markets with known latent segments and known effects.
//!
//! A market is a set of location blobs, each split into sub-regimes with
//! their own feature distributions and piecewise-linear price effects. The
//! generator returns the listing table together with the latent labels, the
//! noiseless price of every row, and a postal-code lookup for geocoding.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::geo::{GeoLookup, LAT_RANGE, LON_RANGE};
use crate::rng::{rng_for, shuffled_indices};
use crate::tabular::{
    relative_gap,
    default_schema, names, Cell, ColumnKind, ColumnSpec, Table, CONDITION_LEVELS,
    DEDUP_TOLERANCE, ENERGY_LEVELS, MIN_PLOT_AREA_M2,
};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid market spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub const HEATING_TYPES: [&str; 4] = ["gas", "oil", "district", "heat_pump"];

/// Piecewise-linear function through `knots` (sorted by x), constant beyond
/// the first and last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piecewise {
    pub knots: Vec<(f64, f64)>,
}

impl Piecewise {
    pub fn new(knots: &[(f64, f64)]) -> Self {
        Self {
            knots: knots.to_vec(),
        }
    }

    pub fn constant(v: f64) -> Self {
        Self::new(&[(0.0, v)])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1].1
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.knots.is_empty() || self.knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SynthError::InvalidSpec(format!(
                "{what}: knots must be non-empty with increasing x"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub name: String,
    /// Share of the blob's listings.
    pub weight: f64,
    pub living_area_m2: (f64, f64),
    pub construction_year: (i32, i32),
    pub plot_area_m2: (f64, f64),
    pub property_types: Vec<String>,
    pub garden_rate: f64,
    pub living_area_effect: Piecewise,
    pub construction_year_effect: Piecewise,
    pub plot_area_effect: Piecewise,
    /// Offset per condition level, in level order.
    pub condition_offsets: Vec<f64>,
    /// Offset per energy class, in level order.
    pub energy_offsets: Vec<f64>,
}

impl RegimeSpec {
    /// True effect curve of a numeric feature, if the regime has one.
    pub fn effect(&self, feature: &str, x: f64) -> Option<f64> {
        match feature {
            names::LIVING_AREA => Some(self.living_area_effect.eval(x)),
            names::CONSTRUCTION_YEAR => Some(self.construction_year_effect.eval(x)),
            names::PLOT_AREA => Some(self.plot_area_effect.eval(x)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub name: String,
    pub center: (f64, f64),
    pub std_deg: f64,
    pub base_price: f64,
    /// Share of all listings.
    pub weight: f64,
    /// Codes are `postal_base + i * postal_step` for `i < postal_codes`.
    pub postal_base: u32,
    pub postal_step: u32,
    pub postal_codes: usize,
    pub regimes: Vec<RegimeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRates {
    pub rental_income: f64,
    pub renovation_year: f64,
    pub n_bathrooms: f64,
    pub n_bedrooms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub blobs: Vec<BlobSpec>,
    pub noise_std: f64,
    pub missing: MissingRates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Latent {
    pub blob: usize,
    pub regime: usize,
}

impl Latent {
    /// Flat id `blob * regimes_per_blob + regime` for equal-sized blobs.
    pub fn flat(&self, regimes_per_blob: usize) -> usize {
        self.blob * regimes_per_blob + self.regime
    }
}

#[derive(Debug, Clone)]
pub struct Market {
    pub table: Table,
    pub labels: Vec<Latent>,
    /// Noiseless price of every row.
    pub truth: Vec<f64>,
    pub lookup: GeoLookup,
}

fn close_to_one(w: f64) -> bool {
    (w - 1.0).abs() < 1e-9
}

impl MarketSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.blobs.is_empty() {
            return bad("no blobs".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        if !close_to_one(self.blobs.iter().map(|b| b.weight).sum()) {
            return bad("blob weights must sum to 1".into());
        }
        let m = &self.missing;
        for r in [m.rental_income, m.renovation_year, m.n_bathrooms, m.n_bedrooms] {
            if !(0.0..=1.0).contains(&r) {
                return bad("missing rates must lie in [0, 1]".into());
            }
        }
        for b in &self.blobs {
            if !(b.std_deg > 0.0) {
                return bad(format!("blob {}: std_deg must be positive", b.name));
            }
            if b.postal_codes == 0 || b.postal_step == 0 {
                return bad(format!("blob {}: needs postal codes", b.name));
            }
            let last = b.postal_base as u64 + (b.postal_codes as u64 - 1) * b.postal_step as u64;
            if b.postal_base < 1000 || last > 99_999 {
                return bad(format!("blob {}: postal codes must have 5 digits", b.name));
            }
            if b.regimes.is_empty() || !close_to_one(b.regimes.iter().map(|r| r.weight).sum()) {
                return bad(format!("blob {}: regime weights must sum to 1", b.name));
            }
            for r in &b.regimes {
                let what = format!("{}/{}", b.name, r.name);
                if r.living_area_m2.0 <= 0.0 || r.living_area_m2.0 > r.living_area_m2.1 {
                    return bad(format!("{what}: bad living area range"));
                }
                if r.plot_area_m2.0 <= 0.0 || r.plot_area_m2.0 > r.plot_area_m2.1 {
                    return bad(format!("{what}: bad plot area range"));
                }
                if r.construction_year.0 > r.construction_year.1 {
                    return bad(format!("{what}: bad construction year range"));
                }
                if r.property_types.is_empty() {
                    return bad(format!("{what}: no property types"));
                }
                if r.condition_offsets.len() != CONDITION_LEVELS.len()
                    || r.energy_offsets.len() != ENERGY_LEVELS.len()
                {
                    return bad(format!("{what}: one offset per level required"));
                }
                r.living_area_effect.validate(&what)?;
                r.construction_year_effect.validate(&what)?;
                r.plot_area_effect.validate(&what)?;
            }
        }
        Ok(())
    }

    pub fn regime(&self, l: Latent) -> &RegimeSpec {
        &self.blobs[l.blob].regimes[l.regime]
    }

    /// Noiseless price of a listing.
    pub fn expected_price(&self, l: Latent, x: &Features) -> f64 {
        let r = self.regime(l);
        self.blobs[l.blob].base_price
            + r.living_area_effect.eval(x.living_area)
            + r.construction_year_effect.eval(x.construction_year as f64)
            + r.plot_area_effect.eval(x.plot_area)
            + r.condition_offsets[x.condition]
            + r.energy_offsets[x.energy_class]
    }
}

/// Price-relevant features of one listing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    pub living_area: f64,
    pub construction_year: i32,
    pub plot_area: f64,
    pub condition: usize,
    pub energy_class: usize,
}

/// Splits `n` by `weights` with the largest-remainder rule; ties go to the
/// lower index.
pub fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

struct Listing {
    latent: Latent,
    x: Features,
    price: f64,
    truth: f64,
    rooms: f64,
    bedrooms: Option<f64>,
    bathrooms: Option<f64>,
    rental_income: Option<f64>,
    renovation_year: Option<f64>,
    garden: bool,
    basement: bool,
    guest_toilet: bool,
    heating: usize,
    property_type: String,
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn draw_listing(
    spec: &MarketSpec,
    latent: Latent,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Listing {
    let r = spec.regime(latent);
    let m = &spec.missing;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let living_area = round_to(uniform(rng, r.living_area_m2), 0.1);
    let plot_area = round_to(uniform(rng, r.plot_area_m2), 0.1);
    let construction_year = rng.random_range(r.construction_year.0..=r.construction_year.1);
    let age_share = (construction_year as f64 - 1900.0) / 124.0;
    let energy_jitter: f64 = Normal::new(0.0, 1.2).unwrap().sample(rng);
    let energy_class = (age_share * 8.0 + energy_jitter).round().clamp(0.0, 8.0) as usize;
    let condition = rng.random_range(0..CONDITION_LEVELS.len());
    let x = Features {
        living_area,
        construction_year,
        plot_area,
        condition,
        energy_class,
    };
    let truth = spec.expected_price(latent, &x);
    let price = (truth + noise.sample(rng)).round();

    let room_jitter: f64 = Normal::new(0.0, 0.6).unwrap().sample(rng);
    let rooms = (living_area / 28.0 + room_jitter).round().max(1.0);
    let bedrooms = (rooms - 1.0 - f64::from(u8::from(rng.random_bool(0.3)))).max(0.0);
    let bathrooms = 1.0 + f64::from(u8::from(living_area > 110.0)) + f64::from(u8::from(living_area > 200.0));
    let rental_income = (!rng.random_bool(m.rental_income))
        .then(|| (living_area * rng.random_range(9.0..16.0)).round());
    let renovation_year = (!rng.random_bool(m.renovation_year))
        .then(|| rng.random_range(construction_year..=2024.max(construction_year)) as f64);
    let bedrooms = (!rng.random_bool(m.n_bedrooms)).then_some(bedrooms);
    let bathrooms = (!rng.random_bool(m.n_bathrooms)).then_some(bathrooms);
    let heating_weights: [f64; 4] = if construction_year >= 2000 {
        [0.3, 0.05, 0.2, 0.45]
    } else {
        [0.45, 0.3, 0.2, 0.05]
    };
    let mut u: f64 = rng.random_range(0.0..1.0);
    let mut heating = HEATING_TYPES.len() - 1;
    for (i, w) in heating_weights.iter().enumerate() {
        if u < *w {
            heating = i;
            break;
        }
        u -= w;
    }
    Listing {
        latent,
        x,
        price,
        truth,
        rooms,
        bedrooms,
        bathrooms,
        rental_income,
        renovation_year,
        garden: rng.random_bool(r.garden_rate),
        basement: rng.random_bool(0.5),
        guest_toilet: rng.random_bool(if living_area > 100.0 { 0.6 } else { 0.2 }),
        heating,
        property_type: r.property_types.choose(rng).expect("validated").clone(),
    }
}

fn postal_code(b: &BlobSpec, i: usize) -> u32 {
    b.postal_base + i as u32 * b.postal_step
}

fn build_lookup(spec: &MarketSpec, rng: &mut ChaCha8Rng) -> Result<GeoLookup> {
    let mut g = GeoLookup::new();
    for b in &spec.blobs {
        let lat_d = Normal::new(b.center.0, b.std_deg).unwrap();
        let lon_d = Normal::new(b.center.1, b.std_deg).unwrap();
        for i in 0..b.postal_codes {
            let mut tries = 0;
            let (lat, lon) = loop {
                let p = (lat_d.sample(rng), lon_d.sample(rng));
                if (LAT_RANGE.0..=LAT_RANGE.1).contains(&p.0) && (LON_RANGE.0..=LON_RANGE.1).contains(&p.1) {
                    break p;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(SynthError::InvalidSpec(format!(
                        "blob {} lies outside the coordinate bounds",
                        b.name
                    )));
                }
            };
            let code = format!("{:05}", postal_code(b, i));
            g.insert(&code, round_to(lat, 1e-5), round_to(lon, 1e-5), 0)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        }
    }
    Ok(g)
}

/// Samples `n` listings. Blob and regime counts follow the weights exactly
/// (largest remainder) and rows are then shuffled. Postal codes are drawn
/// uniformly within the blob, re-drawing whenever a code would make the row a
/// near-duplicate of an earlier one, so deduplication removes nothing.
pub fn generate(spec: &MarketSpec, n: usize, seed: u64) -> Result<Market> {
    spec.validate()?;
    if n == 0 {
        return Err(SynthError::InvalidSpec("n must be at least 1".into()));
    }
    let lookup = build_lookup(spec, &mut rng_for(seed, 0))?;

    let mut slots = Vec::with_capacity(n);
    let blob_counts = allocate(n, &spec.blobs.iter().map(|b| b.weight).collect::<Vec<_>>());
    for (bi, (b, &nb)) in spec.blobs.iter().zip(&blob_counts).enumerate() {
        let weights: Vec<f64> = b.regimes.iter().map(|r| r.weight).collect();
        for (ri, &nr) in allocate(nb, &weights).iter().enumerate() {
            slots.extend(std::iter::repeat_n(Latent { blob: bi, regime: ri }, nr));
        }
    }
    let order = shuffled_indices(n, seed ^ 0x5eed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = rng_for(seed, 1);
    let listings: Vec<Listing> = order
        .iter()
        .map(|&s| {
            let mut l = draw_listing(spec, slots[s], &noise, &mut rng);
            if spec.noise_std == 0.0 {
                l.price = l.truth.round();
            }
            l
        })
        .collect();

    let mut code_rng = rng_for(seed, 2);
    let mut kept: HashMap<(u32, String), Vec<(f64, f64)>> = HashMap::new();
    let mut codes = Vec::with_capacity(n);
    for l in &listings {
        let b = &spec.blobs[l.latent.blob];
        let mut tries = 0;
        let code = loop {
            let code = postal_code(b, code_rng.random_range(0..b.postal_codes));
            let clash = kept
                .get(&(code, l.property_type.clone()))
                .is_some_and(|v| {
                    v.iter().any(|&(p, a)| {
                        relative_gap(p, l.price) <= DEDUP_TOLERANCE
                            && relative_gap(a, l.x.living_area) <= DEDUP_TOLERANCE
                    })
                });
            if !clash {
                break code;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(SynthError::InvalidSpec(format!(
                    "blob {} has too few postal codes for {n} listings",
                    b.name
                )));
            }
        };
        kept.entry((code, l.property_type.clone()))
            .or_default()
            .push((l.price, l.x.living_area));
        codes.push(code);
    }

    let rows = listings
        .iter()
        .zip(&codes)
        .map(|(l, &code)| listing_row(l, code))
        .collect();
    let table = Table::from_rows(default_schema(), rows).expect("schema-shaped rows");
    Ok(Market {
        table,
        labels: listings.iter().map(|l| l.latent).collect(),
        truth: listings.iter().map(|l| l.truth).collect(),
        lookup,
    })
}

fn listing_row(l: &Listing, code: u32) -> Vec<Cell> {
    let num = Cell::Num;
    let opt = |v: Option<f64>| v.map_or(Cell::Missing, Cell::Num);
    let flag = |b: bool| Cell::Num(if b { 1.0 } else { 0.0 });
    vec![
        num(l.price),
        num(code as f64),
        num(l.x.living_area),
        num(l.x.plot_area),
        num(l.x.construction_year as f64),
        opt(l.renovation_year),
        num(l.rooms),
        opt(l.bedrooms),
        opt(l.bathrooms),
        opt(l.rental_income),
        flag(l.garden),
        flag(l.basement),
        flag(l.guest_toilet),
        Cell::Label(ENERGY_LEVELS[l.x.energy_class].to_string()),
        Cell::Label(CONDITION_LEVELS[l.x.condition].to_string()),
        Cell::Label(HEATING_TYPES[l.heating].to_string()),
        Cell::Label(l.property_type.clone()),
    ]
}

fn scaled(p: &[(f64, f64)], k: f64) -> Piecewise {
    Piecewise::new(&p.iter().map(|&(x, y)| (x, y * k)).collect::<Vec<_>>())
}

fn apartments(k: f64) -> RegimeSpec {
    RegimeSpec {
        name: "prewar_apartments".into(),
        weight: 0.5,
        living_area_m2: (35.0, 150.0),
        construction_year: (1890, 1969),
        plot_area_m2: (40.0, 400.0),
        property_types: vec!["apartment".into(), "maisonette".into()],
        garden_rate: 0.15,
        living_area_effect: scaled(&[(35.0, 0.0), (150.0, 300_000.0)], k),
        construction_year_effect: scaled(
            &[(1890.0, 90_000.0), (1918.0, 70_000.0), (1950.0, 10_000.0), (1969.0, 0.0)],
            k,
        ),
        plot_area_effect: scaled(&[(40.0, 0.0), (400.0, 15_000.0)], k),
        condition_offsets: vec![-45_000.0, -5_000.0, 0.0, 8_000.0, 40_000.0],
        energy_offsets: vec![
            -25_000.0, -20_000.0, -18_000.0, -15_000.0, -5_000.0, 0.0, 2_000.0, 15_000.0, 30_000.0,
        ],
    }
}

fn houses(k: f64) -> RegimeSpec {
    RegimeSpec {
        name: "modern_houses".into(),
        weight: 0.5,
        living_area_m2: (90.0, 320.0),
        construction_year: (1970, 2023),
        plot_area_m2: (200.0, 1500.0),
        property_types: vec!["single_family".into(), "semi_detached".into(), "villa".into()],
        garden_rate: 0.9,
        living_area_effect: scaled(
            &[(90.0, 0.0), (170.0, 330_000.0), (230.0, 380_000.0), (320.0, 395_000.0)],
            k,
        ),
        construction_year_effect: scaled(&[(1970.0, 0.0), (1995.0, 20_000.0), (2023.0, 130_000.0)], k),
        plot_area_effect: scaled(&[(200.0, 0.0), (800.0, 60_000.0), (1500.0, 75_000.0)], k),
        condition_offsets: vec![-60_000.0, -10_000.0, 0.0, 5_000.0, 50_000.0],
        energy_offsets: vec![
            -40_000.0, -30_000.0, -25_000.0, -20_000.0, -10_000.0, 0.0, 5_000.0, 20_000.0, 45_000.0,
        ],
    }
}

/// Two cities far apart, each with pre-war apartments (price falls with
/// construction year, linear in living area) and modern houses (price rises
/// with construction year, saturating in living area).
pub fn default_benchmark_spec() -> MarketSpec {
    let blob = |name: &str, center, base, k, postal_base, postal_step| BlobSpec {
        name: name.into(),
        center,
        std_deg: 0.25,
        base_price: base,
        weight: 0.5,
        postal_base,
        postal_step,
        postal_codes: 400,
        regimes: vec![apartments(k), houses(k)],
    };
    MarketSpec {
        blobs: vec![
            blob("north", (52.52, 13.40), 150_000.0, 1.0, 10_000, 10),
            blob("south", (48.14, 11.58), 300_000.0, 2.2, 80_000, 5),
        ],
        noise_std: 25_000.0,
        missing: MissingRates {
            rental_income: 0.8,
            renovation_year: 0.6,
            n_bathrooms: 0.1,
            n_bedrooms: 0.1,
        },
    }
}

pub const BENCHMARK_ROWS: usize = 20_000;

pub fn default_benchmark(seed: u64) -> (Market, MarketSpec) {
    let spec = default_benchmark_spec();
    let market = generate(&spec, BENCHMARK_ROWS, seed).expect("benchmark spec is valid");
    (market, spec)
}

/// `per_blob` points around each of eight centers `10 * e_i` in eight
/// dimensions, with a per-blob label as the target column.
pub fn eight_blob_table(per_blob: usize, seed: u64) -> (Table, Vec<usize>) {
    let mut rng = rng_for(seed, 0);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut schema = vec![ColumnSpec::new(names::PRICE, ColumnKind::Target, "EUR")];
    schema.extend((0..8).map(|j| ColumnSpec::new(&format!("x{j}"), ColumnKind::Numeric, "")));
    let order = shuffled_indices(8 * per_blob, seed);
    let mut labels = Vec::with_capacity(order.len());
    let rows = order
        .iter()
        .map(|&s| {
            let blob = s / per_blob;
            labels.push(blob);
            let mut row = vec![Cell::Num(100_000.0 * (blob + 1) as f64)];
            row.extend((0..8).map(|j| {
                let c = if j == blob { 10.0 } else { 0.0 };
                Cell::Num(round_to(c + noise.sample(&mut rng), 1e-6))
            }));
            row
        })
        .collect();
    (Table::from_rows(schema, rows).expect("fixed schema"), labels)
}

/// True when no regime can draw a plot below the plot-area filter.
pub fn respects_filters(spec: &MarketSpec) -> bool {
    spec.blobs
        .iter()
        .flat_map(|b| &b.regimes)
        .all(|r| r.plot_area_m2.0 >= MIN_PLOT_AREA_M2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{dedup_near, filter_rows, impute};

    fn one_regime(noise: f64) -> MarketSpec {
        let mut spec = default_benchmark_spec();
        spec.blobs.truncate(1);
        spec.blobs[0].weight = 1.0;
        let r = &mut spec.blobs[0].regimes;
        r.truncate(1);
        r[0].weight = 1.0;
        r[0].living_area_effect = Piecewise::constant(0.0);
        r[0].construction_year_effect = Piecewise::constant(0.0);
        r[0].plot_area_effect = Piecewise::constant(0.0);
        r[0].condition_offsets = vec![0.0; 5];
        r[0].energy_offsets = vec![0.0; 9];
        spec.noise_std = noise;
        spec
    }

    #[test]
    fn degenerate_spec_gives_base_price() {
        let spec = one_regime(0.0);
        let m = generate(&spec, 50, 1).unwrap();
        let target = m.table.require_target().unwrap();
        for i in 0..50 {
            assert_eq!(m.table.cell(i, target), &Cell::Num(150_000.0));
        }
    }

    #[test]
    fn piecewise_eval() {
        let p = Piecewise::new(&[(0.0, 0.0), (10.0, 100.0), (20.0, 100.0)]);
        assert_eq!(p.eval(-5.0), 0.0);
        assert_eq!(p.eval(5.0), 50.0);
        assert_eq!(p.eval(15.0), 100.0);
        assert_eq!(p.eval(99.0), 100.0);
    }

    #[test]
    fn largest_remainder() {
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(allocate(7, &[0.5, 0.5]), vec![4, 3]);
        assert_eq!(allocate(100, &[0.25, 0.75]), vec![25, 75]);
    }

    #[test]
    fn exact_label_counts() {
        let (m, _) = default_benchmark(42);
        let mut counts: HashMap<Latent, usize> = HashMap::new();
        for l in &m.labels {
            *counts.entry(*l).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 5000));
    }

    #[test]
    fn survives_preprocessing_untouched() {
        let spec = default_benchmark_spec();
        assert!(respects_filters(&spec));
        let m = generate(&spec, 4000, 3).unwrap();
        let t = filter_rows(&m.table, MIN_PLOT_AREA_M2).unwrap();
        let t = dedup_near(&t, DEDUP_TOLERANCE).unwrap();
        assert_eq!(t.len(), 4000);
        let t = impute(&t).unwrap();
        assert_eq!(t.missing_count(), 0);
        let (geo, tally) = crate::geo::geocode(&m.lookup, &t).unwrap();
        assert_eq!(tally.dropped_unknown, 0);
        assert_eq!(geo.len(), 4000);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = default_benchmark_spec();
        let write = |seed| {
            let m = generate(&spec, 500, seed).unwrap();
            let mut out = Vec::new();
            crate::tabular::write_csv(&m.table, &mut out).unwrap();
            m.lookup.write_csv(&mut out).unwrap();
            out
        };
        assert_eq!(write(9), write(9));
        assert_ne!(write(9), write(10));
    }

    #[test]
    fn ground_truth_mae_is_folded_normal_mean() {
        let spec = one_regime(25_000.0);
        let m = generate(&spec, 50_000, 5).unwrap();
        let target = m.table.require_target().unwrap();
        let mae: f64 = (0..m.table.len())
            .map(|i| (m.table.cell(i, target).as_num().unwrap() - m.truth[i]).abs())
            .sum::<f64>()
            / 50_000.0;
        let expected = 25_000.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mae / expected - 1.0).abs() < 0.02, "{mae} vs {expected}");
    }

    /// Mean of a piecewise-linear function over a uniform interval, by exact
    /// integration of each linear piece.
    fn mean_over_uniform(p: &Piecewise, lo: f64, hi: f64) -> f64 {
        let mut xs = vec![lo, hi];
        xs.extend(p.knots.iter().map(|k| k.0).filter(|&x| x > lo && x < hi));
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let area: f64 = xs.windows(2).map(|w| (w[1] - w[0]) * (p.eval(w[0]) + p.eval(w[1])) / 2.0).sum();
        area / (hi - lo)
    }

    fn normal_cdf(z: f64) -> f64 {
        // Simpson's rule on the standard normal density from 0 to z
        let steps = 2000;
        let h = z / steps as f64;
        let pdf = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = pdf(0.0) + pdf(z);
        for i in 1..steps {
            acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + acc * h / 3.0
    }

    /// Expected energy offset for a construction year, from the class model
    /// `clamp(round(8 * (year - 1900) / 124 + N(0, 1.2)), 0, 8)`.
    fn energy_mean(r: &RegimeSpec, year: f64) -> f64 {
        let mu = (year - 1900.0) / 124.0 * 8.0;
        let cdf = |edge: f64| normal_cdf((edge - mu) / 1.2);
        (0..9)
            .map(|k| {
                let lo = if k == 0 { 0.0 } else { cdf(k as f64 - 0.5) };
                let hi = if k == 8 { 1.0 } else { cdf(k as f64 + 0.5) };
                (hi - lo) * r.energy_offsets[k]
            })
            .sum()
    }

    #[test]
    fn regime_means_separated_by_three_noise_sd() {
        let spec = default_benchmark_spec();
        let mut means = Vec::new();
        for b in &spec.blobs {
            for r in &b.regimes {
                let (y0, y1) = r.construction_year;
                let span = (y1 - y0 + 1) as f64;
                let years: f64 = (y0..=y1)
                    .map(|y| r.construction_year_effect.eval(y as f64) + energy_mean(r, y as f64))
                    .sum::<f64>()
                    / span;
                means.push(
                    b.base_price
                        + mean_over_uniform(&r.living_area_effect, r.living_area_m2.0, r.living_area_m2.1)
                        + years
                        + mean_over_uniform(&r.plot_area_effect, r.plot_area_m2.0, r.plot_area_m2.1)
                        + r.condition_offsets.iter().sum::<f64>() / 5.0,
                );
            }
        }
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                let gap = (means[i] - means[j]).abs();
                assert!(gap >= 3.0 * spec.noise_std, "regimes {i},{j}: {gap} ({means:?})");
            }
        }
    }

    #[test]
    fn regime_means_match_sample() {
        // cross-checks the analytic means above against a large sample
        let spec = default_benchmark_spec();
        let m = generate(&spec, 40_000, 11).unwrap();
        let mut sums = [0.0; 4];
        let mut counts = [0.0; 4];
        for (l, t) in m.labels.iter().zip(&m.truth) {
            sums[l.flat(2)] += t;
            counts[l.flat(2)] += 1.0;
        }
        let b = &spec.blobs[0];
        let r = &b.regimes[0];
        let (y0, y1) = r.construction_year;
        let years: f64 = (y0..=y1)
            .map(|y| r.construction_year_effect.eval(y as f64) + energy_mean(r, y as f64))
            .sum::<f64>()
            / (y1 - y0 + 1) as f64;
        let analytic = b.base_price
            + mean_over_uniform(&r.living_area_effect, r.living_area_m2.0, r.living_area_m2.1)
            + years
            + mean_over_uniform(&r.plot_area_effect, r.plot_area_m2.0, r.plot_area_m2.1)
            + r.condition_offsets.iter().sum::<f64>() / 5.0;
        assert!((sums[0] / counts[0] - analytic).abs() < 3_000.0);
    }

    #[test]
    fn blobs_are_far_apart() {
        let spec = default_benchmark_spec();
        let (a, b) = (&spec.blobs[0], &spec.blobs[1]);
        let d = ((a.center.0 - b.center.0).powi(2) + (a.center.1 - b.center.1).powi(2)).sqrt();
        assert!(d >= 10.0 * a.std_deg.max(b.std_deg));
    }

    #[test]
    fn construction_year_trends_are_opposite() {
        let spec = default_benchmark_spec();
        for b in &spec.blobs {
            let old = &b.regimes[0];
            let new = &b.regimes[1];
            assert!(old.effect(names::CONSTRUCTION_YEAR, 1890.0) > old.effect(names::CONSTRUCTION_YEAR, 1969.0));
            assert!(new.effect(names::CONSTRUCTION_YEAR, 1970.0) < new.effect(names::CONSTRUCTION_YEAR, 2023.0));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = default_benchmark_spec();
        spec.blobs[0].regimes[0].weight = 0.7;
        assert!(generate(&spec, 10, 0).is_err());
        let mut spec = default_benchmark_spec();
        spec.blobs[1].std_deg = 0.0;
        assert!(generate(&spec, 10, 0).is_err());
        assert!(generate(&default_benchmark_spec(), 0, 0).is_err());
    }

    #[test]
    fn eight_blobs_shape() {
        let (t, labels) = eight_blob_table(10, 1);
        assert_eq!(t.len(), 80);
        assert_eq!(t.schema().len(), 9);
        assert_eq!(labels.iter().filter(|&&l| l == 3).count(), 10);
    }
}

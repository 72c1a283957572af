use super::{ColumnKind, ColumnSpec};

/// Column names the preprocessing steps and the pipeline look up by name.
pub mod names {
    pub const PRICE: &str = "price";
    pub const POSTAL_CODE: &str = "postal_code";
    pub const PROPERTY_TYPE: &str = "property_type";
    pub const LIVING_AREA: &str = "living_area";
    pub const PLOT_AREA: &str = "plot_area";
    pub const CONSTRUCTION_YEAR: &str = "construction_year";
    pub const RENOVATION_YEAR: &str = "renovation_year";
    pub const N_ROOMS: &str = "n_rooms";
    pub const N_BEDROOMS: &str = "n_bedrooms";
    pub const N_BATHROOMS: &str = "n_bathrooms";
    pub const RENTAL_INCOME: &str = "rental_income";
    pub const LATITUDE: &str = "latitude";
    pub const LONGITUDE: &str = "longitude";
}

pub const ENERGY_LEVELS: [&str; 9] = ["H", "G", "F", "E", "D", "C", "B", "A", "A+"];
pub const CONDITION_LEVELS: [&str; 5] = [
    "needs_renovation",
    "renovated",
    "well_kept",
    "modernized",
    "first_occupancy",
];

/// Stand-in listing schema: a price target and 16 raw features. Geocoding
/// adds latitude and longitude, giving 18 model features.
pub fn default_schema() -> Vec<ColumnSpec> {
    use ColumnKind::*;
    vec![
        ColumnSpec::new(names::PRICE, Target, "EUR"),
        ColumnSpec::new(names::POSTAL_CODE, Numeric, "code"),
        ColumnSpec::new(names::LIVING_AREA, Numeric, "m2"),
        ColumnSpec::new(names::PLOT_AREA, Numeric, "m2"),
        ColumnSpec::new(names::CONSTRUCTION_YEAR, Numeric, "year"),
        ColumnSpec::new(names::RENOVATION_YEAR, Numeric, "year"),
        ColumnSpec::new(names::N_ROOMS, Numeric, "count"),
        ColumnSpec::new(names::N_BEDROOMS, Numeric, "count"),
        ColumnSpec::new(names::N_BATHROOMS, Numeric, "count"),
        ColumnSpec::new(names::RENTAL_INCOME, Numeric, "EUR/month"),
        ColumnSpec::new("has_garden", Binary, ""),
        ColumnSpec::new("has_basement", Binary, ""),
        ColumnSpec::new("guest_toilet", Binary, ""),
        ColumnSpec::ordinal("energy_class", &ENERGY_LEVELS),
        ColumnSpec::ordinal("condition", &CONDITION_LEVELS),
        ColumnSpec::new("heating_type", Nominal, ""),
        ColumnSpec::new(names::PROPERTY_TYPE, Nominal, ""),
    ]
}

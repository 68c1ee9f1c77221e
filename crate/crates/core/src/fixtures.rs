//! Published reference tables shipped with the library: attribute deal
//! counts, ordered cross-deal pair counts, conditional bucket counts, and the
//! estimated latent covariance with its global loading.
//!
//! All tables use the attribute order of [`crate::model::ATTRIBUTE_LABELS`].

/// Deals per attribute.
pub const MARGINALS: [u64; 12] = [8833, 422, 3003, 1306, 4845, 101, 4162, 1986, 883, 4294, 120, 2108];

/// Total number of deals.
pub const TOTAL_DEALS: u64 = 9255;

/// Ordered pairs `(i, j)`, `i != j`, with deal `i` carrying attribute `u`
/// and deal `j` carrying attribute `v`.
pub const PAIR_COUNTS: [[u64; 12]; 12] = [
    [78_013_056, 3_727_526, 26_522_684, 11_534_649, 42_791_213, 892_036, 36_759_003, 17_540_457, 7_798_712, 37_924_781, 1_059_852, 18_617_927],
    [3_727_526, 177_662, 1_267_078, 551_075, 2_044_417, 42_618, 1_756_145, 837_987, 372_570, 1_811_895, 50_628, 889_505],
    [26_522_684, 1_267_078, 9_015_006, 3_921_918, 14_549_535, 303_303, 12_497_028, 5_963_262, 2_651_387, 12_893_380, 360_287, 6_329_762],
    [11_534_649, 551_075, 3_921_918, 1_704_330, 6_327_570, 131_906, 5_435_051, 2_593_413, 1_153_035, 5_607_295, 156_713, 2_752_830],
    [42_791_213, 2_044_417, 14_549_535, 6_327_570, 23_469_180, 489_345, 20_162_754, 9_621_200, 4_277_690, 20_802_356, 581_360, 10_211_947],
    [892_036, 42_618, 303_303, 131_906, 489_345, 10_100, 420_315, 200_569, 89_170, 433_645, 12_120, 212_893],
    [36_759_003, 1_756_145, 12_497_028, 5_435_051, 20_162_754, 420_315, 17_318_082, 8_264_816, 3_674_772, 17_870_126, 499_344, 8_773_160],
    [17_540_457, 837_987, 5_963_262, 2_593_413, 9_621_200, 200_569, 8_264_816, 3_942_210, 1_753_403, 8_527_006, 238_299, 4_186_302],
    [7_798_712, 372_570, 2_651_387, 1_153_035, 4_277_690, 89_170, 3_674_772, 1_753_403, 778_806, 3_791_367, 105_956, 1_861_341],
    [37_924_781, 1_811_895, 12_893_380, 5_607_295, 20_802_356, 433_645, 17_870_126, 8_527_006, 3_791_367, 18_434_142, 515_229, 9_051_432],
    [1_059_852, 50_628, 360_287, 156_713, 581_360, 12_120, 499_344, 238_299, 105_956, 515_229, 14_280, 252_959],
    [18_617_927, 889_505, 6_329_762, 2_752_830, 10_211_947, 212_893, 8_773_160, 4_186_302, 1_861_341, 9_051_432, 252_959, 4_441_556],
];

/// Deal counts by conditional bucket, `(first-time, repeat)`.
pub const BUCKET_COUNTS: [(&str, u64, u64); 5] = [
    ("None", 8833, 422),
    ("CA / NY", 4064, 245),
    ("Other US / Intl", 4769, 177),
    ("Hot Sectors", 5397, 299),
    ("Non-Hot Sectors", 3436, 123),
];

/// Deals carrying at least one hot-sector label, `(first-time, repeat)`.
pub const HOT_SECTOR_COUNTS: (u64, u64) = (5397, 299);

/// Estimated global loading.
pub const ALPHA0: f64 = 0.0;

/// Estimated latent attribute covariance (4-decimal table, symmetric but
/// marginally indefinite from rounding).
pub const SIGMA: [[f64; 12]; 12] = [
    [0.0012, -0.0134, -0.0081, -0.0009, -0.0028, -0.0003, -0.0051, -0.0030, -0.0060, -0.0017, -0.0032, -0.0028],
    [-0.0134, 0.1950, 0.1171, 0.0152, 0.0398, 0.0055, 0.0809, 0.0440, 0.0877, 0.0279, 0.0482, 0.0404],
    [-0.0081, 0.1171, 0.0713, 0.0090, 0.0239, 0.0036, 0.0489, 0.0259, 0.0523, 0.0172, 0.0291, 0.0239],
    [-0.0009, 0.0152, 0.0090, 0.0015, 0.0031, 0.0005, 0.0066, 0.0035, 0.0069, 0.0023, 0.0036, 0.0030],
    [-0.0028, 0.0398, 0.0239, 0.0031, 0.0082, 0.0011, 0.0165, 0.0090, 0.0179, 0.0056, 0.0098, 0.0082],
    [-0.0003, 0.0055, 0.0036, 0.0005, 0.0011, 0.0003, 0.0026, 0.0012, 0.0024, 0.0010, 0.0014, 0.0010],
    [-0.0051, 0.0809, 0.0489, 0.0066, 0.0165, 0.0026, 0.0347, 0.0183, 0.0363, 0.0121, 0.0202, 0.0165],
    [-0.0030, 0.0440, 0.0259, 0.0035, 0.0090, 0.0012, 0.0183, 0.0107, 0.0201, 0.0059, 0.0109, 0.0094],
    [-0.0060, 0.0877, 0.0523, 0.0069, 0.0179, 0.0024, 0.0363, 0.0201, 0.0397, 0.0124, 0.0217, 0.0184],
    [-0.0017, 0.0279, 0.0172, 0.0023, 0.0056, 0.0010, 0.0121, 0.0059, 0.0124, 0.0045, 0.0070, 0.0055],
    [-0.0032, 0.0482, 0.0291, 0.0036, 0.0098, 0.0014, 0.0202, 0.0109, 0.0217, 0.0070, 0.0124, 0.0101],
    [-0.0028, 0.0404, 0.0239, 0.0030, 0.0082, 0.0010, 0.0165, 0.0094, 0.0184, 0.0055, 0.0101, 0.0088],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_symmetric() {
        for u in 0..12 {
            for v in 0..12 {
                assert_eq!(PAIR_COUNTS[u][v], PAIR_COUNTS[v][u]);
                assert_eq!(SIGMA[u][v], SIGMA[v][u]);
            }
        }
    }

    #[test]
    fn diagonal_pairs_are_ordered_pairs() {
        for u in 0..12 {
            assert_eq!(PAIR_COUNTS[u][u], MARGINALS[u] * (MARGINALS[u] - 1));
        }
        assert_eq!(MARGINALS[0] + MARGINALS[1], TOTAL_DEALS);
        assert_eq!(MARGINALS[2..6].iter().sum::<u64>(), TOTAL_DEALS);
    }
}

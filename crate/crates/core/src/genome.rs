//! Fixed-width bit-string genomes and the codecs that map genes to IPTs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ipt::{IptKind, IptSequence};

/// Bijective map from `bits_per_gene`-bit patterns to IPT kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    bits_per_gene: usize,
    /// `table[pattern]` is the kind encoded by that pattern.
    table: Vec<IptKind>,
}

impl Codec {
    pub fn new(bits_per_gene: usize, table: Vec<IptKind>) -> Result<Self> {
        if !(1..=8).contains(&bits_per_gene) || table.len() != 1 << bits_per_gene {
            return Err(Error::InvalidConfig(format!(
                "a {bits_per_gene}-bit codec needs {} entries, got {}",
                1usize << bits_per_gene.min(16),
                table.len()
            )));
        }
        let mut seen = table.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != table.len() {
            return Err(Error::InvalidConfig("codec table repeats a kind".into()));
        }
        Ok(Codec {
            bits_per_gene,
            table,
        })
    }

    /// Four-filter codec used for MNIST.
    pub fn two_bit() -> Self {
        use IptKind::*;
        Codec::new(
            2,
            vec![DoNothing, AdaptiveSmooth, BilateralSmooth, AdditiveNoise],
        )
        .unwrap()
    }

    /// Eight-filter codec used for CIFAR-like inputs.
    pub fn three_bit() -> Self {
        use IptKind::*;
        Codec::new(
            3,
            vec![
                DoNothing,
                AdaptiveSmooth,
                BilateralSmooth,
                AdditiveNoise,
                Thinning,
                Pixellate,
                Blur,
                Sharpen,
            ],
        )
        .unwrap()
    }

    /// `"2bit"` or `"3bit"`.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "2bit" | "2" => Some(Self::two_bit()),
            "3bit" | "3" => Some(Self::three_bit()),
            _ => None,
        }
    }

    pub fn bits_per_gene(&self) -> usize {
        self.bits_per_gene
    }

    pub fn kinds(&self) -> &[IptKind] {
        &self.table
    }

    fn pattern_of(&self, kind: IptKind) -> Option<usize> {
        self.table.iter().position(|&k| k == kind)
    }

    pub fn check(&self, genome: &Genome, max_len: usize) -> Result<()> {
        let len = genome.bits.len();
        let b = self.bits_per_gene;
        if len == 0 || len % b != 0 || len / b > max_len {
            return Err(Error::BadLength {
                len,
                bits_per_gene: b,
                max_len,
            });
        }
        Ok(())
    }

    pub fn gene_count(&self, genome: &Genome) -> usize {
        genome.bits.len() / self.bits_per_gene
    }

    /// Gene-by-gene decoding; DoNothing genes are kept.
    pub fn decode(&self, genome: &Genome) -> Result<IptSequence> {
        self.check(genome, usize::MAX)?;
        let ops = genome
            .bits
            .chunks_exact(self.bits_per_gene)
            .map(|gene| {
                let pattern = gene
                    .iter()
                    .fold(0usize, |acc, &bit| (acc << 1) | bit as usize);
                self.table[pattern]
            })
            .collect();
        Ok(IptSequence::from_vec_unchecked(ops))
    }

    pub fn encode(&self, seq: &IptSequence) -> Result<Genome> {
        let b = self.bits_per_gene;
        let mut bits = Vec::with_capacity(seq.len() * b);
        for &kind in seq.ops() {
            let pattern = self.pattern_of(kind).ok_or(Error::UnencodableOp(kind, b))?;
            bits.extend((0..b).rev().map(|i| ((pattern >> i) & 1) as u8));
        }
        if bits.is_empty() {
            return Err(Error::BadLength {
                len: 0,
                bits_per_gene: b,
                max_len: 0,
            });
        }
        Ok(Genome { bits })
    }

    /// Uniform gene count in `1..=max_len`, then uniform bits.
    pub fn random_genome(&self, max_len: usize, rng: &mut impl Rng) -> Genome {
        assert!(max_len >= 1, "max_len must be at least one gene");
        let genes = rng.random_range(1..=max_len);
        Genome {
            bits: (0..genes * self.bits_per_gene)
                .map(|_| rng.random_range(0..2u8))
                .collect(),
        }
    }

    /// One genome per table entry repeating that filter `genes` times.
    pub fn homogeneous(&self, genes: usize) -> Vec<Genome> {
        let b = self.bits_per_gene;
        (0..self.table.len())
            .map(|pattern| Genome {
                bits: (0..genes)
                    .flat_map(|_| (0..b).rev().map(move |i| ((pattern >> i) & 1) as u8))
                    .collect(),
            })
            .collect()
    }

    /// Every genome with 1..=max_len genes, shortest first, each length in
    /// ascending bit order.
    pub fn enumerate(&self, max_len: usize) -> Vec<Genome> {
        let b = self.bits_per_gene;
        let mut out = Vec::new();
        for genes in 1..=max_len {
            let bits = genes * b;
            assert!(bits < 32, "enumeration too large");
            for v in 0u32..(1 << bits) {
                out.push(Genome {
                    bits: (0..bits).rev().map(|i| ((v >> i) & 1) as u8).collect(),
                });
            }
        }
        out
    }
}

/// Bit string; serialized as ASCII such as `"111100"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome {
    bits: Vec<u8>,
}

impl Genome {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::BadGenomeChar(char::from(b'0' + b.min(9))));
        }
        Ok(Genome { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::BadGenomeChar(other)),
            })
            .collect::<Result<Vec<_>>>()
            .map(|bits| Genome { bits })
    }
}

impl Serialize for Genome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::seed;
    use IptKind::*;

    fn g(s: &str) -> Genome {
        s.parse().unwrap()
    }

    #[test]
    fn homogeneous_genomes() {
        let two: Vec<String> = Codec::two_bit()
            .homogeneous(3)
            .iter()
            .map(|g| g.to_string())
            .collect();
        assert_eq!(two, ["000000", "010101", "101010", "111111"]);
        let three = Codec::three_bit().homogeneous(2);
        assert_eq!(three.len(), 8);
        assert_eq!(three[5].to_string(), "101101");
    }

    #[test]
    fn table_entries() {
        let two = Codec::two_bit();
        assert_eq!(two.decode(&g("01")).unwrap().ops(), &[AdaptiveSmooth]);
        assert_eq!(
            two.decode(&g("111100")).unwrap().ops(),
            &[AdditiveNoise, AdditiveNoise, DoNothing]
        );
        let three = Codec::three_bit();
        assert_eq!(
            three.decode(&g("111111110010")).unwrap().ops(),
            &[Sharpen, Sharpen, Blur, BilateralSmooth]
        );
        assert_eq!(three.decode(&g("001")).unwrap().ops(), &[AdaptiveSmooth]);
    }

    #[test]
    fn encode_cases() {
        let two = Codec::two_bit();
        let seq = IptSequence::new(vec![AdditiveNoise], 1).unwrap();
        assert_eq!(two.encode(&seq).unwrap().to_string(), "11");
        let thin = IptSequence::new(vec![Thinning], 1).unwrap();
        assert!(matches!(
            two.encode(&thin),
            Err(Error::UnencodableOp(Thinning, 2))
        ));
        assert_eq!(Codec::three_bit().encode(&thin).unwrap().to_string(), "100");
    }

    #[test]
    fn bad_lengths() {
        let three = Codec::three_bit();
        assert!(matches!(
            three.decode(&g("0101")),
            Err(Error::BadLength { .. })
        ));
        assert!(matches!(three.decode(&g("")), Err(Error::BadLength { .. })));
        assert!(three.check(&g("000000000"), 2).is_err());
        assert!("01a".parse::<Genome>().is_err());
    }

    #[test]
    fn codec_must_be_bijective() {
        assert!(Codec::new(1, vec![Blur, Blur]).is_err());
        assert!(Codec::new(1, vec![Blur]).is_err());
        assert!(Codec::new(1, vec![Blur, Thickening]).is_ok());
    }

    #[test]
    fn single_gene_random_genomes() {
        let two = Codec::two_bit();
        let mut rng = seed::rng(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let genome = two.random_genome(1, &mut rng);
            seen.insert(genome.to_string());
        }
        let expect: std::collections::BTreeSet<String> = ["00", "01", "10", "11"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(seen, expect);
        let a = two.random_genome(3, &mut seed::rng(9));
        let b = two.random_genome(3, &mut seed::rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn random_lengths_are_uniform() {
        // 10,000 draws over 3 length classes: count ~ Binomial(10000, 1/3),
        // sigma = sqrt(10000 * 1/3 * 2/3) = 47.14; accept within 5 sigma.
        let n = 10_000usize;
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        let codec = Codec::two_bit();
        let mut rng = seed::rng(2024);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[codec.gene_count(&codec.random_genome(3, &mut rng)) - 1] += 1;
        }
        for c in counts {
            assert!(
                (c as f64 - n as f64 / 3.0).abs() < 5.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(Codec::two_bit().enumerate(2).len(), 4 + 16);
        assert_eq!(Codec::three_bit().enumerate(2).len(), 8 + 64);
    }

    #[test]
    fn serde_as_bit_string() {
        let json = serde_json::to_string(&g("111100")).unwrap();
        assert_eq!(json, "\"111100\"");
        assert_eq!(serde_json::from_str::<Genome>(&json).unwrap(), g("111100"));
    }

    proptest! {
        #[test]
        fn decode_encode_roundtrip(bits in proptest::collection::vec(0u8..2, 1..8), three in any::<bool>()) {
            let codec = if three { Codec::three_bit() } else { Codec::two_bit() };
            let b = codec.bits_per_gene();
            let genes = bits.len().div_ceil(b);
            let mut bits = bits;
            bits.resize(genes * b, 0);
            let genome = Genome::from_bits(bits).unwrap();
            let seq = codec.decode(&genome).unwrap();
            prop_assert_eq!(seq.len(), genes);
            prop_assert_eq!(codec.encode(&seq).unwrap(), genome);
        }
    }
}

//! Pricing models used by the scenario generator: a constant-product pool
//! with a proportional fee, a share-issuing vault, LP-token valuation and a
//! collateralised lender.
//!
//! Every formula keeps intermediate values exact (512-bit or arbitrary
//! precision) and floors once at the end, as contracts do.

pub mod scenario;

use num::rational::Ratio;
use num::{BigUint, One, Zero};
use primitive_types::{U256, U512};
use thiserror::Error;

use crate::units::{Address, Amount, AssetId};

pub type Rational = Ratio<BigUint>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AmmError {
    #[error("trade input must be positive")]
    ZeroInput,
    #[error("trade would drain the output reserve")]
    InsufficientLiquidity,
    #[error("reserve overflow")]
    Overflow,
    #[error("vault holds no value")]
    EmptyVault,
    #[error("burn of {burn} exceeds total supply {supply}")]
    BurnExceedsSupply { burn: Amount, supply: Amount },
    #[error("LP token supply is zero")]
    EmptySupply,
    #[error("invalid pool: {0}")]
    InvalidPool(&'static str),
    #[error("invalid fee {num}/{den}")]
    InvalidFee { num: u64, den: u64 },
}

/// Fraction of the input that stays in the trade after the pool fee.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeeConfig {
    pub num: u64,
    pub den: u64,
}

impl Default for FeeConfig {
    fn default() -> Self {
        FeeConfig {
            num: 997,
            den: 1000,
        }
    }
}

impl FeeConfig {
    pub fn new(num: u64, den: u64) -> Result<Self, AmmError> {
        if den == 0 || num == 0 || num > den {
            return Err(AmmError::InvalidFee { num, den });
        }
        Ok(FeeConfig { num, den })
    }

    pub fn is_free(&self) -> bool {
        self.num == self.den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolState {
    pub reserve_x: Amount,
    pub reserve_y: Amount,
    pub asset_x: AssetId,
    pub asset_y: AssetId,
    pub address: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Sell X, receive Y.
    XforY,
    /// Sell Y, receive X.
    YforX,
}

impl Side {
    pub fn reverse(self) -> Side {
        match self {
            Side::XforY => Side::YforX,
            Side::YforX => Side::XforY,
        }
    }
}

impl PoolState {
    pub fn new(
        address: Address,
        asset_x: AssetId,
        asset_y: AssetId,
        reserve_x: Amount,
        reserve_y: Amount,
    ) -> Result<Self, AmmError> {
        if asset_x == asset_y {
            return Err(AmmError::InvalidPool("both sides hold the same asset"));
        }
        if reserve_x.is_zero() || reserve_y.is_zero() {
            return Err(AmmError::InvalidPool("empty reserve"));
        }
        Ok(PoolState {
            reserve_x,
            reserve_y,
            asset_x,
            asset_y,
            address,
        })
    }

    /// (reserve in, reserve out) for a trade on `side`.
    pub fn reserves(&self, side: Side) -> (Amount, Amount) {
        match side {
            Side::XforY => (self.reserve_x, self.reserve_y),
            Side::YforX => (self.reserve_y, self.reserve_x),
        }
    }

    /// (asset in, asset out) for a trade on `side`.
    pub fn assets(&self, side: Side) -> (AssetId, AssetId) {
        match side {
            Side::XforY => (self.asset_x, self.asset_y),
            Side::YforX => (self.asset_y, self.asset_x),
        }
    }

    /// Units of Y per unit of X at the current reserves.
    pub fn spot_y_per_x(&self) -> Rational {
        Ratio::new(to_big(self.reserve_y), to_big(self.reserve_x))
    }

    pub fn k(&self) -> U512 {
        self.reserve_x.0.full_mul(self.reserve_y.0)
    }
}

/// Output of selling `x` into reserves `(r_in, r_out)`:
/// `floor(f·x·r_out / (f·x + r_in))` with `f` the fee fraction.
pub fn swap_out_with(x: Amount, r_in: Amount, r_out: Amount, fee: FeeConfig) -> Amount {
    let x_fee = x.0.full_mul(U256::from(fee.num));
    let num = mul512(x_fee, r_out.0);
    let den = x_fee + r_in.0.full_mul(U256::from(fee.den));
    if den.is_zero() {
        return Amount::ZERO;
    }
    narrow(num / den).expect("quotient is below r_out")
}

/// Selling `x` of X into `pool` at the default fee.
pub fn swap_out(x: Amount, pool: &PoolState) -> Amount {
    swap_out_with(x, pool.reserve_x, pool.reserve_y, FeeConfig::default())
}

/// Executes a trade and returns the new pool and the output amount.
pub fn apply_trade(
    pool: &PoolState,
    side: Side,
    amount_in: Amount,
    fee: FeeConfig,
) -> Result<(PoolState, Amount), AmmError> {
    if amount_in.is_zero() {
        return Err(AmmError::ZeroInput);
    }
    let (r_in, r_out) = pool.reserves(side);
    let out = swap_out_with(amount_in, r_in, r_out, fee);
    let new_out = r_out
        .checked_sub(out)
        .filter(|r| !r.is_zero())
        .ok_or(AmmError::InsufficientLiquidity)?;
    let new_in = r_in.checked_add(amount_in).ok_or(AmmError::Overflow)?;
    let mut next = *pool;
    match side {
        Side::XforY => {
            next.reserve_x = new_in;
            next.reserve_y = new_out;
        }
        Side::YforX => {
            next.reserve_y = new_in;
            next.reserve_x = new_out;
        }
    }
    Ok((next, out))
}

/// Smallest Y input that at least doubles the pool's Y-per-X price.
pub fn derive_doubling_input(pool: &PoolState, fee: FeeConfig) -> Result<Amount, AmmError> {
    let doubled = |delta: Amount| -> Result<bool, AmmError> {
        let (after, _) = apply_trade(pool, Side::YforX, delta, fee)?;
        // after.y / after.x >= 2 * y / x
        let lhs = mul512(after.reserve_y.0.full_mul(pool.reserve_x.0), U256::one());
        let rhs = mul512(
            after.reserve_x.0.full_mul(pool.reserve_y.0),
            U256::from(2u8),
        );
        Ok(lhs >= rhs)
    };
    let mut lo = Amount::from(1u64);
    let mut hi = pool.reserve_y;
    if !doubled(hi)? {
        return Err(AmmError::InsufficientLiquidity);
    }
    while lo < hi {
        let mid = Amount(lo.0 + (hi.0 - lo.0) / 2);
        if doubled(mid)? {
            hi = mid;
        } else {
            lo = Amount(mid.0 + 1);
        }
    }
    Ok(hi)
}

/// Share-issuing vault whose holdings are part underlying, part an
/// external position priced through a manipulable conversion rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaultState {
    pub reserve_underlying: Amount,
    pub reserve_lp_external: Amount,
    pub total_supply_shares: Amount,
    /// Underlying units per unit of the external position.
    pub external_rate: Rational,
}

impl VaultState {
    /// Total value in underlying units, exact.
    pub fn tvl(&self) -> Rational {
        Ratio::from_integer(to_big(self.reserve_underlying))
            + &self.external_rate * to_big(self.reserve_lp_external)
    }
}

/// Shares minted for `deposit`: `deposit / TVL · TS`, floored.
pub fn vault_mint(v: &VaultState, deposit: Amount) -> Result<Amount, AmmError> {
    if deposit.is_zero() {
        return Err(AmmError::ZeroInput);
    }
    let tvl = v.tvl();
    if tvl.is_zero() {
        return Err(AmmError::EmptyVault);
    }
    let shares = Ratio::from_integer(to_big(deposit) * to_big(v.total_supply_shares)) / tvl;
    from_big(shares.to_integer())
}

/// Underlying paid for burning `burn` shares: `burn / TS · TVL`, floored.
pub fn vault_redeem(v: &VaultState, burn: Amount) -> Result<Amount, AmmError> {
    if burn.is_zero() {
        return Err(AmmError::ZeroInput);
    }
    if burn > v.total_supply_shares {
        return Err(AmmError::BurnExceedsSupply {
            burn,
            supply: v.total_supply_shares,
        });
    }
    let paid = v.tvl() * to_big(burn) / to_big(v.total_supply_shares);
    from_big(paid.to_integer())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpPricing {
    /// Values the pool as twice its Ether side.
    EtherDoubled {
        reserve_eth: Amount,
        unit_price_eth: Rational,
    },
    /// Values every reserve at its own unit price.
    FullReserves {
        reserve0: Amount,
        unit_price0: Rational,
        reserve1: Amount,
        unit_price1: Rational,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpPricerState {
    pub pricing: LpPricing,
    pub total_supply_lp: Amount,
}

/// Value of one LP token.
pub fn lp_unit_price(s: &LpPricerState) -> Result<Rational, AmmError> {
    if s.total_supply_lp.is_zero() {
        return Err(AmmError::EmptySupply);
    }
    let value = match &s.pricing {
        LpPricing::EtherDoubled {
            reserve_eth,
            unit_price_eth,
        } => unit_price_eth * (to_big(*reserve_eth) * 2u32),
        LpPricing::FullReserves {
            reserve0,
            unit_price0,
            reserve1,
            unit_price1,
        } => unit_price0 * to_big(*reserve0) + unit_price1 * to_big(*reserve1),
    };
    Ok(value / to_big(s.total_supply_lp))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LendingConfig {
    /// Collateral value required per unit borrowed.
    pub collateral_ratio: Rational,
}

impl Default for LendingConfig {
    fn default() -> Self {
        LendingConfig {
            collateral_ratio: Ratio::new(BigUint::from(3u32), BigUint::from(2u32)),
        }
    }
}

pub fn max_borrow(collateral_value: &Rational, cfg: &LendingConfig) -> Rational {
    collateral_value / &cfg.collateral_ratio
}

pub fn to_big(a: Amount) -> BigUint {
    BigUint::from_bytes_be(&a.to_word())
}

pub fn from_big(b: BigUint) -> Result<Amount, AmmError> {
    let bytes = b.to_bytes_be();
    if bytes.len() > 32 {
        return Err(AmmError::Overflow);
    }
    let mut word = [0u8; 32];
    word[32 - bytes.len()..].copy_from_slice(&bytes);
    Ok(Amount::from_word(&word))
}

/// Floors a rational to an amount.
pub fn floor_amount(r: &Rational) -> Result<Amount, AmmError> {
    from_big(r.to_integer())
}

fn mul512(a: U512, b: U256) -> U512 {
    a * U512::from(b)
}

fn narrow(v: U512) -> Option<Amount> {
    U256::try_from(v).ok().map(Amount)
}

/// Exact rational from a ratio of small integers.
pub fn ratio(num: u64, den: u64) -> Rational {
    Ratio::new(BigUint::from(num), BigUint::from(den))
}

/// Exact rational from an amount.
pub fn rational(a: Amount) -> Rational {
    Ratio::from_integer(to_big(a))
}

impl Default for VaultState {
    fn default() -> Self {
        VaultState {
            reserve_underlying: Amount::ZERO,
            reserve_lp_external: Amount::ZERO,
            total_supply_shares: Amount::ZERO,
            external_rate: Ratio::one(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e18(s: &str) -> Amount {
        Amount::from_units(s, 18).unwrap()
    }

    fn pool(x: &str, y: &str) -> PoolState {
        PoolState::new(
            Address::from_low_u64(1),
            AssetId::Erc20(Address::from_low_u64(2)),
            AssetId::Erc20(Address::from_low_u64(3)),
            e18(x),
            e18(y),
        )
        .unwrap()
    }

    #[test]
    fn small_swap_matches_hand_value() {
        let out = swap_out(e18("10"), &pool("1000", "1000")).to_f64_units(18);
        assert!((out - 9.871580343970612).abs() < 1e-9, "{out}");
    }

    #[test]
    fn empty_out_reserve_yields_nothing() {
        assert_eq!(
            swap_out_with(e18("1"), e18("1"), Amount::ZERO, FeeConfig::default()),
            Amount::ZERO
        );
    }

    #[test]
    fn trade_moves_reserves() {
        let p = pool("1000", "1000");
        let (q, out) = apply_trade(&p, Side::XforY, e18("900"), FeeConfig::default()).unwrap();
        assert_eq!(q.reserve_x, e18("1900"));
        assert_eq!(q.reserve_y.checked_add(out).unwrap(), e18("1000"));
        assert!(q.k() >= p.k());
        assert_eq!(
            apply_trade(&p, Side::XforY, Amount::ZERO, FeeConfig::default()),
            Err(AmmError::ZeroInput)
        );
    }

    #[test]
    fn doubling_input_is_minimal() {
        let p = pool("1000", "1000");
        let fee = FeeConfig::default();
        let d = derive_doubling_input(&p, fee).unwrap();
        let f = d.to_f64_units(18) / 1000.0;
        assert!((f - 0.4148359532).abs() < 1e-6, "{f}");
        let (after, _) = apply_trade(&p, Side::YforX, d, fee).unwrap();
        assert!(after.spot_y_per_x() >= p.spot_y_per_x() * to_big(Amount::from(2u64)));
        let (short, _) = apply_trade(&p, Side::YforX, Amount(d.0 - 1), fee).unwrap();
        assert!(short.spot_y_per_x() < p.spot_y_per_x() * to_big(Amount::from(2u64)));
    }

    #[test]
    fn vault_bootstrap_and_full_redeem() {
        let v = VaultState {
            reserve_underlying: e18("100"),
            reserve_lp_external: Amount::ZERO,
            total_supply_shares: e18("100"),
            external_rate: ratio(1, 1),
        };
        assert_eq!(vault_mint(&v, e18("7")).unwrap(), e18("7"));
        assert_eq!(vault_redeem(&v, e18("100")).unwrap(), e18("100"));
        assert!(matches!(
            vault_redeem(&v, e18("101")),
            Err(AmmError::BurnExceedsSupply { .. })
        ));
        assert_eq!(
            vault_mint(&VaultState::default(), e18("1")),
            Err(AmmError::EmptyVault)
        );
    }

    #[test]
    fn vault_mint_at_harvest_scale() {
        let usdc = |s: &str| Amount::from_units(s, 6).unwrap();
        let v = VaultState {
            reserve_underlying: usdc("60200"),
            reserve_lp_external: Amount::ZERO,
            total_supply_shares: usdc("69000"),
            external_rate: ratio(1, 1),
        };
        assert_eq!(vault_mint(&v, usdc("60200000")).unwrap(), usdc("69000000"));
    }

    #[test]
    fn redeem_grows_with_external_rate() {
        let mut v = VaultState {
            reserve_underlying: e18("10"),
            reserve_lp_external: e18("90"),
            total_supply_shares: e18("100"),
            external_rate: ratio(1, 1),
        };
        let before = vault_redeem(&v, e18("10")).unwrap();
        v.external_rate = ratio(101, 100);
        assert!(vault_redeem(&v, e18("10")).unwrap() > before);
    }

    #[test]
    fn lp_prices() {
        let ts = e18("100");
        let doubled = LpPricerState {
            pricing: LpPricing::EtherDoubled {
                reserve_eth: e18("50"),
                unit_price_eth: ratio(1, 1),
            },
            total_supply_lp: ts,
        };
        assert_eq!(lp_unit_price(&doubled).unwrap(), ratio(1, 1));
        let full = LpPricerState {
            pricing: LpPricing::FullReserves {
                reserve0: e18("50"),
                unit_price0: ratio(1, 1),
                reserve1: e18("25"),
                unit_price1: ratio(2, 1),
            },
            total_supply_lp: ts,
        };
        assert_eq!(
            lp_unit_price(&full).unwrap(),
            lp_unit_price(&doubled).unwrap()
        );
    }

    #[test]
    fn borrowing_limits() {
        let cfg = LendingConfig::default();
        assert_eq!(max_borrow(&ratio(3, 2), &cfg), ratio(1, 1));
        assert_eq!(max_borrow(&ratio(3, 1), &cfg), ratio(2, 1));
        assert!(max_borrow(&ratio(0, 1), &cfg).is_zero());
    }
}

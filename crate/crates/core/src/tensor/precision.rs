use std::cell::Cell;
use std::sync::OnceLock;

/// Element precision of tensor storage.
///
/// `Standard` keeps every stored value representable as a 32-bit float
/// (results are rounded after each operation); `High` keeps full 64-bit values
/// and is what finite-difference checks run under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Standard,
    High,
}

/// Name of the environment variable that selects the process default.
pub const PRECISION_ENV: &str = "HYPERLINK_PRECISION";

fn env_default() -> Precision {
    static DEFAULT: OnceLock<Precision> = OnceLock::new();
    *DEFAULT.get_or_init(|| match std::env::var(PRECISION_ENV) {
        Ok(v) if v.eq_ignore_ascii_case("high") => Precision::High,
        _ => Precision::Standard,
    })
}

thread_local! {
    static CURRENT: Cell<Option<Precision>> = const { Cell::new(None) };
}

pub fn current_precision() -> Precision {
    CURRENT.with(|c| c.get()).unwrap_or_else(env_default)
}

/// Override the precision for the calling thread.
pub fn set_thread_precision(p: Precision) {
    CURRENT.with(|c| c.set(Some(p)));
}

/// Run `f` with the calling thread switched to `p`, restoring the previous setting.
pub fn with_precision<R>(p: Precision, f: impl FnOnce() -> R) -> R {
    let prev = CURRENT.with(|c| c.replace(Some(p)));
    struct Restore(Option<Precision>);
    impl Drop for Restore {
        fn drop(&mut self) {
            let prev = self.0;
            CURRENT.with(|c| c.set(prev));
        }
    }
    let _guard = Restore(prev);
    f()
}

pub(crate) fn round_slice(values: &mut [f64]) {
    if current_precision() == Precision::Standard {
        for v in values.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

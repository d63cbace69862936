//! Loss, RMSprop updates, and gradient checking.

mod gradcheck;
mod loss;
mod rmsprop;

pub use gradcheck::{
    finite_diff_check, finite_diff_check_with, relative_error, GradCheckEntry, GradCheckReport,
    GradCheckSetup, REL_ERROR_FLOOR,
};
pub use loss::nll_loss;
pub use rmsprop::{Rmsprop, RmspropConfig};

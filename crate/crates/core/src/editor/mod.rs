//! Attribute editing in latent space: one learned direction module per
//! attribute, trained against a frozen latent-to-attribute regressor.

pub mod direction;
pub mod kan;
pub mod loss;
pub mod train;

pub use direction::{DirectionModule, EditorConfig, EditorParams, Net, Variant, DEGENERATE_NORM};
pub use kan::{KanGridConfig, KanLayer, KanNet};
pub use loss::{edit_loss, edit_loss_tape, EditLoss, EditLossVars};
pub use train::{batch_loss, sample_batch, train_editor, EditBatch};

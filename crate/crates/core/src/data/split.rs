use super::{LabeledImage, Taxonomy};
use crate::error::{Error, Result};
use crate::ndcore::{RngStream, Tensor};

/// Train/validation/test partition. `train_source` and `val_source` hold the
/// indices each image had in the original training list.
#[derive(Clone, Debug, Default)]
pub struct DataSplit {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub train_source: Vec<usize>,
    pub val_source: Vec<usize>,
}

impl DataSplit {
    pub fn with_test(mut self, test: Vec<LabeledImage>) -> Self {
        self.test = test;
        self
    }
}

/// Stratified split: for every class, `round(frac · count)` images drawn
/// uniformly without replacement go to validation. Both halves keep the
/// original relative order.
pub fn split_train_val(
    images: Vec<LabeledImage>,
    frac: f64,
    rng: &mut RngStream,
) -> Result<DataSplit> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty image list"));
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Argument(format!(
            "validation fraction must lie in (0, 1), got {frac}"
        )));
    }
    let num_classes = images.iter().map(|i| i.label).max().unwrap() + 1;
    let mut by_class = vec![Vec::new(); num_classes];
    for (idx, img) in images.iter().enumerate() {
        by_class[img.label].push(idx);
    }
    let mut in_val = vec![false; images.len()];
    for idxs in &mut by_class {
        let take = (frac * idxs.len() as f64).round() as usize;
        rng.shuffle(idxs);
        for &i in &idxs[..take] {
            in_val[i] = true;
        }
    }
    let mut split = DataSplit::default();
    for (idx, (img, val)) in images.into_iter().zip(in_val).enumerate() {
        if val {
            split.val.push(img);
            split.val_source.push(idx);
        } else {
            split.train.push(img);
            split.train_source.push(idx);
        }
    }
    Ok(split)
}

/// Images whose label belongs to `category`, order preserved.
pub fn filter_by_category(
    images: &[LabeledImage],
    category: &str,
    taxonomy: &Taxonomy,
) -> Result<Vec<LabeledImage>> {
    let c = taxonomy.category_index(category)?;
    Ok(images
        .iter()
        .filter(|img| taxonomy.category_of(img.label) == c)
        .cloned()
        .collect())
}

/// One epoch of shuffled mini-batches. The final batch may be short.
pub struct MiniBatches<'a> {
    images: &'a [LabeledImage],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn minibatches<'a>(
    images: &'a [LabeledImage],
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<MiniBatches<'a>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    rng.shuffle(&mut order);
    Ok(MiniBatches {
        images,
        order,
        batch_size,
        pos: 0,
    })
}

impl<'a> Iterator for MiniBatches<'a> {
    type Item = Vec<&'a LabeledImage>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end]
            .iter()
            .map(|&i| &self.images[i])
            .collect();
        self.pos = end;
        Some(batch)
    }
}

/// Stacks images into a `batch × pixels` tensor plus their labels.
pub fn stack<'a>(batch: impl IntoIterator<Item = &'a LabeledImage>) -> (Tensor, Vec<usize>) {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0;
    for img in batch {
        width = img.pixels.len();
        data.extend_from_slice(img.pixels.data());
        labels.push(img.label);
    }
    let rows = labels.len();
    (
        Tensor::matrix(rows, width, data).expect("images share one width"),
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(per_class: usize) -> Vec<LabeledImage> {
        (0..10 * per_class)
            .map(|i| LabeledImage {
                pixels: Tensor::vector(vec![i as f32; 4]),
                label: i % 10,
            })
            .collect()
    }

    #[test]
    fn stratified_split_sizes() {
        let split = split_train_val(images(500), 0.1, &mut RngStream::new(1)).unwrap();
        assert_eq!(split.train.len(), 4500);
        assert_eq!(split.val.len(), 500);
        let mut counts = [0; 10];
        for img in &split.val {
            counts[img.label] += 1;
        }
        assert_eq!(counts, [50; 10]);
    }

    #[test]
    fn split_is_a_disjoint_cover() {
        let split = split_train_val(images(30), 0.1, &mut RngStream::new(2)).unwrap();
        let mut all: Vec<usize> = split
            .train_source
            .iter()
            .chain(&split.val_source)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        // pixels carry the source index in this fixture
        for (img, &src) in split.val.iter().zip(&split.val_source) {
            assert_eq!(img.pixels.data()[0], src as f32);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_train_val(images(20), 0.1, &mut RngStream::new(3)).unwrap();
        let b = split_train_val(images(20), 0.1, &mut RngStream::new(3)).unwrap();
        assert_eq!(a.val_source, b.val_source);
    }

    #[test]
    fn split_rejects_empty_input() {
        assert!(matches!(
            split_train_val(vec![], 0.1, &mut RngStream::new(0)),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn filter_examples() {
        let tax = Taxonomy::cifar10();
        let imgs = images(45);
        let vehicles = filter_by_category(&imgs, "vehicles", &tax).unwrap();
        assert_eq!(vehicles.len(), 4 * 45);
        assert!(vehicles.iter().all(|i| [0, 1, 8, 9].contains(&i.label)));
        let animals = filter_by_category(&vehicles, "animals", &tax).unwrap();
        assert!(animals.is_empty());
        assert!(matches!(
            filter_by_category(&imgs, "plants", &tax),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn minibatch_partition() {
        let imgs = images(10);
        let sizes: Vec<usize> = minibatches(&imgs, 32, &mut RngStream::new(4))
            .unwrap()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        let mut seen: Vec<f32> = minibatches(&imgs, 32, &mut RngStream::new(4))
            .unwrap()
            .flatten()
            .map(|i| i.pixels.data()[0])
            .collect();
        seen.sort_by(f32::total_cmp);
        assert_eq!(seen, (0..100).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_order_is_seeded() {
        let imgs = images(10);
        let order = |seed| -> Vec<usize> {
            minibatches(&imgs, 7, &mut RngStream::new(seed))
                .unwrap()
                .flatten()
                .map(|i| i.pixels.data()[0] as usize)
                .collect()
        };
        assert_eq!(order(5), order(5));
        assert_ne!(order(5), order(6));
        assert!(minibatches(&imgs, 0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn stack_builds_batch_matrix() {
        let imgs = images(1);
        let (x, y) = stack(imgs.iter().take(3));
        assert_eq!(x.shape(), &[3, 4]);
        assert_eq!(y, vec![0, 1, 2]);
        assert_eq!(x.row(2), &[2.0; 4]);
    }
}

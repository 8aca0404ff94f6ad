use std::collections::VecDeque;

use super::BinaryMask;

/// Pixel adjacency used for labelling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Per-pixel component labels of a mask.
///
/// Label 0 is background; components are numbered from 1 in raster order of
/// their first pixel.
#[derive(Clone, Debug)]
pub struct ComponentLabels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// `areas[i]` is the pixel count of label `i + 1`.
    pub areas: Vec<usize>,
    /// Raster index of the first pixel of label `i + 1`.
    pub first_pixel: Vec<usize>,
}

impl ComponentLabels {
    pub fn count(&self) -> usize {
        self.areas.len()
    }

    /// Labels ordered by area descending, ties broken by the smallest
    /// top-left pixel.
    pub fn by_area(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (1..=self.areas.len() as u32).collect();
        order.sort_by_key(|l| (std::cmp::Reverse(self.areas[*l as usize - 1]), self.first_pixel[*l as usize - 1]));
        order
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::from_bits(self.width, self.height, self.labels.iter().map(|l| *l == label).collect())
            .expect("label buffer matches dimensions")
    }

    /// The largest component, if any.
    pub fn largest(&self) -> Option<BinaryMask> {
        self.by_area().first().map(|l| self.mask_of(*l))
    }
}

pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabels {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let mut first_pixel = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if bits[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        areas.push(area);
        first_pixel.push(start);
    }
    ComponentLabels {
        width: w,
        height: h,
        labels,
        areas,
        first_pixel,
    }
}

/// Splits a mask into connected components, largest first (ties by smallest
/// top-left pixel).
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<BinaryMask> {
    let labels = label_components(mask, connectivity);
    labels.by_area().into_iter().map(|l| labels.mask_of(l)).collect()
}

/// Fills every background region not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    if w == 0 || h == 0 {
        return mask.clone();
    }
    let bits = mask.bits();
    let mut exterior = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |i: usize, exterior: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !bits[i] && !exterior[i] {
            exterior[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut exterior, &mut queue);
        seed((h - 1) * w + x, &mut exterior, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut exterior, &mut queue);
        seed(y * w + w - 1, &mut exterior, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !bits[j] && !exterior[j] {
                exterior[j] = true;
                queue.push_back(j);
            }
        }
    }
    BinaryMask::from_bits(w, h, exterior.into_iter().map(|e| !e).collect()).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn isolated_pixels_are_separate() {
        let m = mask_from(&["#..", "...", "..#"]);
        let comps = connected_components(&m, Connectivity::Four);
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.area() == 1));
    }

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&BinaryMask::new(5, 5), Connectivity::Eight).is_empty());
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let m = mask_from(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
    }

    #[test]
    fn components_sorted_by_area_then_position() {
        let m = mask_from(&["#..##", ".....", "##...", "....#"]);
        let comps = connected_components(&m, Connectivity::Four);
        let areas: Vec<_> = comps.iter().map(BinaryMask::area).collect();
        assert_eq!(areas, vec![2, 2, 1, 1]);
        // The top-right pair comes before the left pair on row 2.
        assert!(comps[0].get(3, 0));
        assert!(comps[1].get(0, 2));
        assert!(comps[2].get(0, 0));
    }

    #[test]
    fn hollow_square_fills_solid() {
        let m = BinaryMask::from_fn(9, 9, |x, y| {
            (2..=6).contains(&x) && (2..=6).contains(&y) && (x == 2 || x == 6 || y == 2 || y == 6)
        });
        let filled = fill_holes(&m);
        assert_eq!(filled.area(), 25);
        assert!(m.is_subset_of(&filled));
    }

    #[test]
    fn solid_and_empty_unchanged_by_fill() {
        let solid = BinaryMask::from_fn(9, 9, |x, y| (2..6).contains(&x) && (3..7).contains(&y));
        assert_eq!(fill_holes(&solid), solid);
        let empty = BinaryMask::new(7, 4);
        assert_eq!(fill_holes(&empty), empty);
    }

    #[test]
    fn eight_connected_ring_seals_interior() {
        let m = mask_from(&[".....", "..#..", ".#.#.", "..#..", "....."]);
        assert_eq!(fill_holes(&m).area(), 5);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn components_partition_the_mask(m in arb_mask(), eight in any::<bool>()) {
            let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
            let comps = connected_components(&m, conn);
            let total: usize = comps.iter().map(BinaryMask::area).sum();
            prop_assert_eq!(total, m.area());
            let mut union = BinaryMask::new(m.width(), m.height());
            for c in &comps {
                prop_assert_eq!(union.intersection_area(c).unwrap(), 0);
                union = union.union(c).unwrap();
                // Each piece is itself a single component.
                prop_assert_eq!(connected_components(c, conn).len(), 1);
            }
            prop_assert_eq!(union, m);
        }

        #[test]
        fn fill_holes_is_idempotent_superset(m in arb_mask()) {
            let once = fill_holes(&m);
            prop_assert!(m.is_subset_of(&once));
            prop_assert_eq!(fill_holes(&once), once);
        }
    }
}

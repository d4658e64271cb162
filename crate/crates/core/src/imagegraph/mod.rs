//! Raster images and the node graphs built on top of them.
//!
//! A [`RagGraph`] is either a pixel grid (every pixel is a node) or a region
//! adjacency graph over superpixels. Nodes carry their pixel count and mean
//! feature; edges carry the number of 4-adjacent pixel pairs they span.

mod pnm;
mod slic;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use pnm::{decode_pnm, decode_raw, encode_pgm, load_image, write_pgm, RawPnm};
pub use slic::{build_superpixel_rag, slic_labels, SuperpixelConfig};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header ({field}): {detail}")]
    Header { field: &'static str, detail: String },
    #[error("unexpected end of data")]
    UnexpectedEof,
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("sample value {value} at index {index} outside [0, 1]")]
    Range { index: usize, value: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a missing node")]
    NodeOutOfRange(usize, usize),
    #[error("node {0} has zero size")]
    ZeroSize(usize),
    #[error("edge ({0}, {1}) has zero boundary length")]
    ZeroBoundary(usize, usize),
    #[error("graph is disconnected: node {0} unreachable from node 0")]
    Disconnected(usize),
    #[error("feature vector length {got}, expected {expected}")]
    FeatureLength { got: usize, expected: usize },
    #[error("pixel map does not partition the image: {0}")]
    Partition(String),
    #[error("invalid superpixel config: {0}")]
    Config(String),
}

/// Row-major image with samples normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Dimensions(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if width == 0 || height == 0 || width * height * channels != data.len() {
            return Err(ImageError::Dimensions(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::Range { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector of pixel `p` (row-major index).
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Number of 4-adjacent pixel pairs spanning the two nodes.
    pub boundary: u64,
}

/// Which pixels make up each node. Only present for graphs built from images.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub width: usize,
    pub height: usize,
    pub pixel_node: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagGraph {
    sizes: Vec<u64>,
    channels: usize,
    features: Vec<f64>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    pixels: Option<PixelMap>,
}

impl RagGraph {
    /// Builds and validates an abstract graph. Edges are normalized to `a < b`
    /// and sorted; the edge list passed in must not contain duplicates.
    pub fn new(
        sizes: Vec<u64>,
        channels: usize,
        features: Vec<f64>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, GraphError> {
        let n = sizes.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if features.len() != n * channels {
            return Err(GraphError::FeatureLength {
                got: features.len(),
                expected: n * channels,
            });
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(GraphError::ZeroSize(i));
        }
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| Edge {
                a: e.a.min(e.b),
                b: e.a.max(e.b),
                boundary: e.boundary,
            })
            .collect();
        edges.sort();
        for (idx, e) in edges.iter().enumerate() {
            if e.a == e.b {
                return Err(GraphError::SelfLoop(e.a));
            }
            if e.b >= n {
                return Err(GraphError::NodeOutOfRange(e.a, e.b));
            }
            if e.boundary == 0 {
                return Err(GraphError::ZeroBoundary(e.a, e.b));
            }
            if idx > 0 && edges[idx - 1].a == e.a && edges[idx - 1].b == e.b {
                return Err(GraphError::DuplicateEdge(e.a, e.b));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[e.a].push((e.b, idx));
            adjacency[e.b].push((e.a, idx));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let graph = Self {
            sizes,
            channels,
            features,
            edges,
            adjacency,
            pixels: None,
        };
        if let Some(unreached) = graph.first_unreachable() {
            return Err(GraphError::Disconnected(unreached));
        }
        Ok(graph)
    }

    /// Unit-size, unit-boundary graph from a plain edge list. Features are
    /// zero. Mostly useful for tests and toy instances.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::new(
            vec![1; n],
            1,
            vec![0.0; n],
            edges.iter().map(|&(a, b)| Edge { a, b, boundary: 1 }),
        )
    }

    /// Builds the region adjacency graph induced by a per-pixel node id map.
    /// Node ids must be dense in `0..node_count`.
    pub fn from_label_map(img: &RasterImage, pixel_node: Vec<usize>) -> Result<Self, GraphError> {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        if pixel_node.len() != w * h {
            return Err(GraphError::Partition(format!(
                "{} labels for {} pixels",
                pixel_node.len(),
                w * h
            )));
        }
        let n = pixel_node.iter().max().map_or(0, |&m| m + 1);
        let mut members = vec![Vec::new(); n];
        for (p, &node) in pixel_node.iter().enumerate() {
            members[node].push(p);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(GraphError::Partition(format!("node {empty} has no pixels")));
        }
        let mut sums = vec![0.0; n * c];
        for (p, &node) in pixel_node.iter().enumerate() {
            for (ch, v) in img.pixel(p).iter().enumerate() {
                sums[node * c + ch] += v;
            }
        }
        let sizes: Vec<u64> = members.iter().map(|m| m.len() as u64).collect();
        let features = sums
            .iter()
            .enumerate()
            .map(|(idx, s)| s / sizes[idx / c] as f64)
            .collect();
        let mut boundary: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let mut neighbors = [None, None];
                if x + 1 < w {
                    neighbors[0] = Some(p + 1);
                }
                if y + 1 < h {
                    neighbors[1] = Some(p + w);
                }
                for q in neighbors.into_iter().flatten() {
                    let (u, v) = (pixel_node[p], pixel_node[q]);
                    if u != v {
                        *boundary.entry((u.min(v), u.max(v))).or_default() += 1;
                    }
                }
            }
        }
        let mut graph = Self::new(
            sizes,
            c,
            features,
            boundary
                .into_iter()
                .map(|((a, b), boundary)| Edge { a, b, boundary }),
        )?;
        graph.pixels = Some(PixelMap {
            width: w,
            height: h,
            pixel_node,
            members,
        });
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self, node: usize) -> u64 {
        self.sizes[node]
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn feature(&self, node: usize) -> &[f64] {
        &self.features[node * self.channels..(node + 1) * self.channels]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(neighbor, edge index)` pairs, sorted by neighbor.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn pixel_map(&self) -> Option<&PixelMap> {
        self.pixels.as_ref()
    }

    /// Node containing pixel `(row, col)`, if the graph has a pixel map.
    pub fn node_at(&self, row: usize, col: usize) -> Option<usize> {
        let map = self.pixels.as_ref()?;
        (row < map.height && col < map.width).then(|| map.pixel_node[row * map.width + col])
    }

    fn first_unreachable(&self) -> Option<usize> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().position(|s| !s)
    }
}

/// Pixel-level graph: one node per pixel, 4-neighborhood edges.
pub fn build_grid_graph(img: &RasterImage) -> RagGraph {
    let pixel_node = (0..img.pixel_count()).collect();
    RagGraph::from_label_map(img, pixel_node).expect("a pixel grid is always a valid graph")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(width: usize, height: usize, data: Vec<f64>) -> RasterImage {
        RasterImage::new(width, height, 1, data).unwrap()
    }

    /// Counts 4-neighbor pairs by brute force over all pixel pairs.
    fn brute_force_grid_edges(w: usize, h: usize) -> usize {
        let mut count = 0;
        for p in 0..w * h {
            for q in p + 1..w * h {
                let (py, px) = ((p / w) as i64, (p % w) as i64);
                let (qy, qx) = ((q / w) as i64, (q % w) as i64);
                if (py - qy).abs() + (px - qx).abs() == 1 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn grid_edge_counts() {
        let g = build_grid_graph(&gray(2, 2, vec![0.0; 4]));
        assert_eq!((g.node_count(), g.edge_count()), (4, 4));
        let g = build_grid_graph(&gray(3, 1, vec![0.0; 3]));
        assert_eq!((g.node_count(), g.edge_count()), (3, 2));
        assert_eq!(g.neighbors(1), &[(0, 0), (2, 1)]);
        assert_eq!(brute_force_grid_edges(3, 3), 12);
        let g = build_grid_graph(&gray(3, 3, vec![0.0; 9]));
        assert_eq!((g.node_count(), g.edge_count()), (9, 12));
        for (w, h) in [(1, 1), (4, 3), (5, 7)] {
            let g = build_grid_graph(&gray(w, h, vec![0.5; w * h]));
            assert_eq!(g.edge_count(), brute_force_grid_edges(w, h));
            assert!(g.sizes().iter().all(|&s| s == 1));
            assert!(g.edges().iter().all(|e| e.boundary == 1));
        }
    }

    #[test]
    fn grid_features_are_pixels() {
        let img = RasterImage::new(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 0.5, 1.0]).unwrap();
        let g = build_grid_graph(&img);
        assert_eq!(g.feature(1), &[0.0, 0.5, 1.0]);
        assert_eq!(g.node_at(0, 1), Some(1));
        assert_eq!(g.node_at(1, 0), None);
    }

    #[test]
    fn label_map_boundaries() {
        // 2x3 image: left column node 0, rest node 1
        let img = gray(3, 2, vec![0.0, 0.5, 0.5, 0.0, 1.0, 1.0]);
        let g = RagGraph::from_label_map(&img, vec![0, 1, 1, 0, 1, 1]).unwrap();
        assert_eq!(g.sizes(), &[2, 4]);
        assert_eq!(
            g.edges(),
            &[Edge {
                a: 0,
                b: 1,
                boundary: 2
            }]
        );
        assert!((g.feature(1)[0] - 0.75).abs() < 1e-12);
        assert_eq!(g.feature(0), &[0.0]);
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert_eq!(
            RagGraph::from_edges(3, &[(0, 1)]).unwrap_err(),
            GraphError::Disconnected(2)
        );
        assert_eq!(
            RagGraph::from_edges(2, &[(0, 1), (1, 0)]).unwrap_err(),
            GraphError::DuplicateEdge(0, 1)
        );
        assert_eq!(
            RagGraph::from_edges(2, &[(1, 1)]).unwrap_err(),
            GraphError::SelfLoop(1)
        );
        assert_eq!(RagGraph::from_edges(0, &[]).unwrap_err(), GraphError::Empty);
        let img = gray(2, 1, vec![0.0, 0.0]);
        assert!(matches!(
            RagGraph::from_label_map(&img, vec![0, 2]),
            Err(GraphError::Partition(_))
        ));
        // disconnected in image space: pixels 0 and 2 share node 0 but enclose nothing
        let img = gray(3, 1, vec![0.0; 3]);
        let g = RagGraph::from_label_map(&img, vec![0, 1, 0]).unwrap();
        assert_eq!(g.edges()[0].boundary, 2);
    }

    #[test]
    fn image_validation() {
        assert!(RasterImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(RasterImage::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(
            RasterImage::new(1, 1, 1, vec![1.5]),
            Err(ImageError::Range { index: 0, .. })
        ));
    }
}

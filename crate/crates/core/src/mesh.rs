//! Structured crossed triangulation of the reference channel and its
//! plain-text exchange format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffd::{Point, ReferenceBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeTag {
    Inflow,
    Outflow,
    BottomWall,
    /// The flexible part of the boundary, on `x2 = x2_max`.
    FlexibleWall,
}

impl EdgeTag {
    pub const ALL: [EdgeTag; 4] = [
        EdgeTag::Inflow,
        EdgeTag::Outflow,
        EdgeTag::BottomWall,
        EdgeTag::FlexibleWall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeTag::Inflow => "inflow",
            EdgeTag::Outflow => "outflow",
            EdgeTag::BottomWall => "bottom_wall",
            EdgeTag::FlexibleWall => "flexible_wall",
        }
    }
}

impl FromStr for EdgeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown edge tag '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Sorted vertex pair.
    pub vertices: [usize; 2],
    pub tag: Option<EdgeTag>,
    /// Adjacent triangles; the second is `None` on the boundary.
    pub triangles: (usize, Option<usize>),
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles.1.is_none()
    }
}

/// Conforming triangle mesh with tagged boundary edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Local edge `k` of triangle `t` joins local vertices `k` and `(k+1) % 3`.
    pub triangle_edges: Vec<[usize; 3]>,
}

/// Local vertex pairs of the three triangle edges.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

impl Mesh {
    /// Builds edges and adjacency from a triangle list, tagging boundary edges with `tagger`.
    pub fn from_triangles<F>(nodes: Vec<Point>, triangles: Vec<[usize; 3]>, mut tagger: F) -> Result<Self>
    where
        F: FnMut([usize; 2]) -> Option<EdgeTag>,
    {
        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::Argument(format!("triangle {t} references a missing node")));
            }
            let mut local = [0; 3];
            for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let key = sorted([tri[*a], tri[*b]]);
                let id = match lookup.get(&key) {
                    Some(&id) => {
                        let e = &mut edges[id];
                        if e.triangles.1.is_some() {
                            return Err(Error::Argument(format!("edge {key:?} shared by more than two triangles")));
                        }
                        e.triangles.1 = Some(t);
                        id
                    }
                    None => {
                        let id = edges.len();
                        lookup.insert(key, id);
                        edges.push(Edge {
                            vertices: key,
                            tag: None,
                            triangles: (t, None),
                        });
                        id
                    }
                };
                local[k] = id;
            }
            triangle_edges.push(local);
        }
        for e in edges.iter_mut().filter(|e| e.is_boundary()) {
            e.tag = tagger(e.vertices);
            if e.tag.is_none() {
                return Err(Error::Argument(format!("boundary edge {:?} has no tag", e.vertices)));
            }
        }
        Ok(Self {
            nodes,
            triangles,
            edges,
            triangle_edges,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.nodes[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn edges_with_tag(&self, tag: EdgeTag) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.tag == Some(tag))
    }

    /// Vertices on the flexible wall, ordered by increasing `x1`.
    pub fn wall_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges_with_tag(EdgeTag::FlexibleWall)
            .flat_map(|(_, e)| e.vertices)
            .collect();
        v.sort_by(|a, b| self.nodes[*a][0].total_cmp(&self.nodes[*b][0]));
        v.dedup();
        v
    }

    /// Plain-text export: `NODES`, `TRIANGLES` and `EDGES` sections of comma separated rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "NODES {}", self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{}", p[0], p[1]);
        }
        let _ = writeln!(s, "TRIANGLES {}", self.triangles.len());
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "EDGES {}", self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            let tag = e.tag.map_or("interior", EdgeTag::as_str);
            let _ = writeln!(s, "{i},{},{},{tag}", e.vertices[0], e.vertices[1]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let nodes = read_section(&mut lines, "NODES", 3, |f| {
            Ok([parse::<f64>(f[1])?, parse::<f64>(f[2])?])
        })?;
        let triangles = read_section(&mut lines, "TRIANGLES", 4, |f| {
            Ok([parse(f[1])?, parse(f[2])?, parse(f[3])?])
        })?;
        let tagged = read_section(&mut lines, "EDGES", 4, |f| {
            let tag = match f[3] {
                "interior" => None,
                t => Some(t.parse::<EdgeTag>()?),
            };
            Ok((sorted([parse(f[1])?, parse(f[2])?]), tag))
        })?;
        let tags: HashMap<[usize; 2], Option<EdgeTag>> = tagged.into_iter().collect();
        let mesh = Mesh::from_triangles(nodes, triangles, |key| tags.get(&key).copied().flatten())?;
        if mesh.edges.len() != tags.len() {
            return Err(Error::Parse("EDGES section does not match the triangulation".into()));
        }
        Ok(mesh)
    }
}

fn sorted([a, b]: [usize; 2]) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn parse<T: FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse '{s}'")))
}

fn read_section<'a, I, T, F>(lines: &mut I, name: &str, fields: usize, mut row: F) -> Result<Vec<T>>
where
    I: Iterator<Item = &'a str>,
    F: FnMut(&[&str]) -> Result<T>,
{
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("missing {name} section")))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(name) {
        return Err(Error::Parse(format!("expected {name} section, found '{header}'")));
    }
    let count: usize = parse(parts.next().unwrap_or(""))?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{name}: expected {count} rows, found {i}")))?;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != fields || parse::<usize>(f[0])? != i {
            return Err(Error::Parse(format!("{name}: malformed row '{line}'")));
        }
        out.push(row(&f)?);
    }
    Ok(out)
}

/// Crossed-pattern mesh of the box: each of the `nx * ny` cells is split into
/// four triangles through its center.
pub fn build_mesh(nx: usize, ny: usize, bbox: &ReferenceBox) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Argument(format!("mesh subdivisions must be positive (got {nx} x {ny})")));
    }
    bbox.validate()?;
    let grid = |i: usize, j: usize| j * (nx + 1) + i;
    let n_grid = (nx + 1) * (ny + 1);
    let center = |i: usize, j: usize| n_grid + j * nx + i;
    let dx = bbox.width() / nx as f64;
    let dy = bbox.height() / ny as f64;

    let mut nodes = Vec::with_capacity(n_grid + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([bbox.x1_min + i as f64 * dx, bbox.x2_min + j as f64 * dy]);
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            nodes.push([
                bbox.x1_min + (i as f64 + 0.5) * dx,
                bbox.x2_min + (j as f64 + 0.5) * dy,
            ]);
        }
    }
    // Pin the far sides exactly to the box.
    for j in 0..=ny {
        nodes[grid(nx, j)][0] = bbox.x1_max;
    }
    for i in 0..=nx {
        nodes[grid(i, ny)][1] = bbox.x2_max;
    }

    let mut triangles = Vec::with_capacity(4 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d, e) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1), center(i, j));
            triangles.extend([[a, b, e], [b, c, e], [c, d, e], [d, a, e]]);
        }
    }

    let col = |v: usize| if v < n_grid { Some(v % (nx + 1)) } else { None };
    let row = |v: usize| if v < n_grid { Some(v / (nx + 1)) } else { None };
    Mesh::from_triangles(nodes, triangles, |[a, b]| {
        let (ca, cb, ra, rb) = (col(a)?, col(b)?, row(a)?, row(b)?);
        if ra == rb && ra == 0 {
            Some(EdgeTag::BottomWall)
        } else if ra == rb && ra == ny {
            Some(EdgeTag::FlexibleWall)
        } else if ca == cb && ca == 0 {
            Some(EdgeTag::Inflow)
        } else if ca == cb && ca == nx {
            Some(EdgeTag::Outflow)
        } else {
            None
        }
    })
}

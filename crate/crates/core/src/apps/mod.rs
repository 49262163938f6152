//! Point-cloud export, synthetic depth-of-field rendering, and depth colouring.

mod bokeh;
mod colormap;
mod pointcloud;

pub use bokeh::{coc_radius, render_bokeh, BokehParams};
pub use colormap::{colorize_depth, PALETTE};
pub use pointcloud::{backproject, export_ply, parse_ply, write_ply, Point, PointCloud};

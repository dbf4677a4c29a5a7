#include "gridvlm/geometry.hpp"

#include <algorithm>

namespace gridvlm::world {

namespace {

// Classic 8x8 console font rows for '0'..'9', MSB = leftmost pixel.
constexpr uint8_t kDigitFont[10][8] = {
    {0x7C, 0xC6, 0xCE, 0xDE, 0xF6, 0xE6, 0x7C, 0x00},
    {0x30, 0x70, 0x30, 0x30, 0x30, 0x30, 0xFC, 0x00},
    {0x78, 0xCC, 0x0C, 0x38, 0x60, 0xCC, 0xFC, 0x00},
    {0x78, 0xCC, 0x0C, 0x38, 0x0C, 0xCC, 0x78, 0x00},
    {0x1C, 0x3C, 0x6C, 0xCC, 0xFE, 0x0C, 0x1E, 0x00},
    {0xFC, 0xC0, 0xF8, 0x0C, 0x0C, 0xCC, 0x78, 0x00},
    {0x38, 0x60, 0xC0, 0xF8, 0xCC, 0xCC, 0x78, 0x00},
    {0xFC, 0xCC, 0x0C, 0x18, 0x30, 0x30, 0x30, 0x00},
    {0x78, 0xCC, 0xCC, 0x78, 0xCC, 0xCC, 0x78, 0x00},
    {0x78, 0xCC, 0xCC, 0x7C, 0x0C, 0x18, 0x70, 0x00},
};

constexpr double kBackground = 0.08;
constexpr double kMaskGray = 0.5;

double foreground_level(int color) { return 0.35 + 0.2 * color; }

}  // namespace

void GridImage::validate() const {
  if (width <= 0 || height <= 0 || patch_size <= 0)
    throw InputError("image dimensions must be positive");
  if (width % patch_size != 0 || height % patch_size != 0)
    throw InputError("image size must be a multiple of patch_size");
  if (cell_rows <= 0 || cell_cols <= 0) throw InputError("cell grid must be positive");
  if (width % cell_cols != 0 || height % cell_rows != 0)
    throw InputError("image size must be a multiple of the cell grid");
  if (cell_width() % patch_size != 0 || cell_height() % patch_size != 0)
    throw InputError("cells must cover whole patches");
  if (cells.size() != static_cast<size_t>(cell_rows * cell_cols))
    throw InputError("cell array size mismatch");
  for (const Cell& c : cells) {
    if (c.symbol < 0 || c.symbol > kMaskSymbol) throw InputError("cell symbol out of range");
    if (c.color < 0 || c.color >= kColorCount) throw InputError("cell color out of range");
  }
}

BoundingBox GridImage::cell_box(int r, int c) const {
  return BoundingBox{c * cell_width(), r * cell_height(), (c + 1) * cell_width(),
                     (r + 1) * cell_height()};
}

GridImage make_grid_image(int cell_rows, int cell_cols, int patch_size) {
  GridImage img;
  img.patch_size = patch_size;
  img.cell_rows = cell_rows;
  img.cell_cols = cell_cols;
  img.width = cell_cols * patch_size;
  img.height = cell_rows * patch_size;
  img.cells.assign(static_cast<size_t>(cell_rows * cell_cols), Cell{});
  img.validate();
  return img;
}

Mat render(const GridImage& img) {
  img.validate();
  Mat px = Mat::Constant(img.height, img.width, kBackground);
  int cw = img.cell_width();
  int ch = img.cell_height();
  for (int r = 0; r < img.cell_rows; ++r) {
    for (int c = 0; c < img.cell_cols; ++c) {
      const Cell& cell = img.cell(r, c);
      int x0 = c * cw;
      int y0 = r * ch;
      if (cell.symbol == kMaskSymbol) {
        px.block(y0, x0, ch, cw).setConstant(kMaskGray);
        continue;
      }
      // The 8x8 glyph is scaled to fill the cell.
      double fg = foreground_level(cell.color);
      int sx = cw / 8;
      int sy = ch / 8;
      for (int gy = 0; gy < 8; ++gy) {
        uint8_t row = kDigitFont[cell.symbol][gy];
        for (int gx = 0; gx < 8; ++gx) {
          if (!(row & (0x80u >> gx))) continue;
          px.block(y0 + gy * sy, x0 + gx * sx, sy, sx).setConstant(fg);
        }
      }
    }
  }
  return px;
}

Mat patch_pixels(const GridImage& img) {
  Mat px = render(img);
  int ps = img.patch_size;
  Mat out(img.patch_count(), ps * ps);
  for (int py = 0; py < img.patches_y(); ++py) {
    for (int pxi = 0; pxi < img.patches_x(); ++pxi) {
      int p = py * img.patches_x() + pxi;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x) out(p, y * ps + x) = px(py * ps + y, pxi * ps + x);
    }
  }
  return out;
}

PatchSet boxes_to_patches(const std::vector<BoundingBox>& boxes, const GridImage& img) {
  img.validate();
  int ps = img.patch_size;
  int nx = img.patches_x();
  int ny = img.patches_y();
  // Covered area per patch, computed on the pixel grid so overlapping boxes
  // are not double counted.
  std::vector<uint8_t> covered(static_cast<size_t>(img.width * img.height), 0);
  for (BoundingBox b : boxes) {
    if (b.x_min > b.x_max || b.y_min > b.y_max) throw InputError("box with negative extent");
    b.x_min = std::clamp(b.x_min, 0, img.width);
    b.x_max = std::clamp(b.x_max, 0, img.width);
    b.y_min = std::clamp(b.y_min, 0, img.height);
    b.y_max = std::clamp(b.y_max, 0, img.height);
    for (int y = b.y_min; y < b.y_max; ++y)
      for (int x = b.x_min; x < b.x_max; ++x) covered[static_cast<size_t>(y * img.width + x)] = 1;
  }
  PatchSet out;
  for (int py = 0; py < ny; ++py) {
    for (int pxi = 0; pxi < nx; ++pxi) {
      int area = 0;
      for (int y = py * ps; y < (py + 1) * ps; ++y)
        for (int x = pxi * ps; x < (pxi + 1) * ps; ++x)
          area += covered[static_cast<size_t>(y * img.width + x)];
      // Inclusion threshold: overlap covers at least half the patch area.
      if (2 * area >= ps * ps) out.push_back(py * nx + pxi);
    }
  }
  return out;
}

GridImage mask_regions(const GridImage& img, const std::vector<BoundingBox>& boxes,
                       MaskFill fill) {
  (void)fill;  // single policy: neutral gray
  PatchSet patches = boxes_to_patches(boxes, img);
  GridImage out = img;
  int nx = img.patches_x();
  int cw = img.cell_width() / img.patch_size;   // patches per cell, x
  int chp = img.cell_height() / img.patch_size; // patches per cell, y
  for (int p : patches) {
    int py = p / nx;
    int pxi = p % nx;
    int r = py / chp;
    int c = pxi / cw;
    out.cell(r, c).symbol = kMaskSymbol;
  }
  return out;
}

}  // namespace gridvlm::world

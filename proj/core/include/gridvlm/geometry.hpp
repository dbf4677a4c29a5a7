#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gridvlm/common.hpp"

namespace gridvlm::world {

using Mat = Eigen::MatrixXd;

constexpr int kSymbolCount = 10;  // digit glyphs 0..9
constexpr int kMaskSymbol = 10;   // neutral fill, renders flat gray
constexpr int kColorCount = 4;

struct Cell {
  int symbol = 0;  // 0..9, or kMaskSymbol
  int color = 0;   // 0..3, picks foreground intensity
};

// Axis-aligned pixel rectangle, half-open: [x_min, x_max) x [y_min, y_max).
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
};

// Sorted, duplicate-free patch indices in row-major patch order.
using PatchSet = std::vector<int>;

struct GridImage {
  int width = 64;
  int height = 64;
  int patch_size = 16;
  int cell_rows = 4;
  int cell_cols = 4;
  std::vector<Cell> cells;  // row-major, cell_rows * cell_cols

  void validate() const;
  int patches_x() const { return width / patch_size; }
  int patches_y() const { return height / patch_size; }
  int patch_count() const { return patches_x() * patches_y(); }
  int cell_width() const { return width / cell_cols; }
  int cell_height() const { return height / cell_rows; }
  const Cell& cell(int r, int c) const { return cells[static_cast<size_t>(r * cell_cols + c)]; }
  Cell& cell(int r, int c) { return cells[static_cast<size_t>(r * cell_cols + c)]; }
  BoundingBox cell_box(int r, int c) const;
};

GridImage make_grid_image(int cell_rows = 4, int cell_cols = 4, int patch_size = 16);

// Grayscale render in [0,1], height x width.
Mat render(const GridImage& img);

// One row per patch (row-major patch order), each row the flattened
// patch_size x patch_size pixel block.
Mat patch_pixels(const GridImage& img);

// A patch belongs to the set iff at least half of its area is covered by the
// union of the boxes. Boxes are clipped to the image first.
PatchSet boxes_to_patches(const std::vector<BoundingBox>& boxes, const GridImage& img);

enum class MaskFill { kNeutral };

// Replaces every cell that intersects the patch set of `boxes` with the
// neutral mask symbol. Geometry and all other cells are untouched.
GridImage mask_regions(const GridImage& img, const std::vector<BoundingBox>& boxes,
                       MaskFill fill = MaskFill::kNeutral);

}  // namespace gridvlm::world

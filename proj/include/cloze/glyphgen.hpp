#pragma once

// Synthetic handwriting-line renderer. Each vocabulary char owns a procedural
// 5x7 stroke grid (random-walk strokes, seeded by char id); odd ids are
// perturbed copies of the preceding even id so confusion pairs stay
// shape-similar (>= 70% ink overlap by construction). Grids are upscaled to
// img_height, jittered per char (shift / thickness / width scale), composed
// left to right with a configurable gap, and padded to a fixed width for
// block-aligned feature extraction. Images are float32 in [0,1], background
// 1.0, ink near 0.

#include "cloze/common.hpp"
#include "cloze/vocab.hpp"

namespace cloze {

struct GlyphImage {
  int height = 0;
  int width = 0;
  int valid_width = 0;  // columns left of this are real content, rest padding
  std::vector<float> pixels;  // row-major, height*width

  float& at(int r, int c) { return pixels[size_t(r) * size_t(width) + size_t(c)]; }
  float at(int r, int c) const { return pixels[size_t(r) * size_t(width) + size_t(c)]; }

  static GlyphImage blank(int h, int w, float fill = 1.0f) {
    GlyphImage img;
    img.height = h;
    img.width = w;
    img.valid_width = w;
    img.pixels.assign(size_t(h) * size_t(w), fill);
    return img;
  }
};

struct GlyphStyle {
  int style_id = 0;
  int x_shift = 0;          // pixels, ink shifted within the glyph box
  int y_shift = 0;
  int thickness_delta = 0;  // -1 erode, +1 dilate
  float width_scale = 1.0f; // must stay within [0.7, 1.4]

  void validate() const {
    if (width_scale < 0.7f || width_scale > 1.4f)
      throw std::invalid_argument("width_scale " + std::to_string(width_scale) +
                                  " outside [0.7, 1.4]");
  }
};

struct GlyphGenConfig {
  int img_height = 32;
  int block_width = 8;
  int grid_cols = 5;
  int grid_rows = 7;
  int cell_h = 4;            // vertical pixels per grid cell
  int base_char_width = 15;  // glyph width at width_scale 1.0
  int gap = 4;               // inter-glyph gap in pixels
  int ligature_overlap = 6;  // gap becomes -overlap on a ligature event
  int ligature_widen = 6;    // or gap+widen on a split-look event
  float wscale_min = 0.85f;
  float wscale_max = 1.25f;
  float ink_max = 0.25f;     // per-char ink level drawn from [0, ink_max]
  float ligature_prob = 0.0f;
  float confusion_glyph_prob = 0.0f;
  uint64_t glyph_seed = 7;

  int max_char_width() const { return int(std::ceil(base_char_width * wscale_max)); }
};

// ---------------------------------------------------------------------------
// Procedural stroke grids

class GlyphFont {
 public:
  GlyphFont(const Vocabulary& vocab, const GlyphGenConfig& cfg)
      : cols_(cfg.grid_cols), rows_(cfg.grid_rows) {
    grids_.resize(size_t(vocab.char_count()));
    for (int id = 0; id < vocab.char_count(); ++id) {
      if (id % 2 == 1) {
        grids_[size_t(id)] = perturb(grids_[size_t(id) - 1], mix_seed(cfg.glyph_seed, "sibling", uint64_t(id)));
      } else {
        grids_[size_t(id)] = walk_grid(mix_seed(cfg.glyph_seed, "glyph", uint64_t(id)));
      }
    }
  }

  const std::vector<uint8_t>& grid(int id) const { return grids_.at(size_t(id)); }
  int cols() const { return cols_; }
  int rows() const { return rows_; }

  // |ink(a) & ink(b)| / max(|ink(a)|, |ink(b)|)
  double ink_overlap(int a, int b) const {
    const auto& ga = grid(a);
    const auto& gb = grid(b);
    int na = 0, nb = 0, both = 0;
    for (size_t i = 0; i < ga.size(); ++i) {
      na += ga[i] ? 1 : 0;
      nb += gb[i] ? 1 : 0;
      both += (ga[i] && gb[i]) ? 1 : 0;
    }
    return double(both) / double(std::max({na, nb, 1}));
  }

 private:
  std::vector<uint8_t> walk_grid(uint64_t seed) const {
    Rng rng(seed);
    std::vector<uint8_t> g(size_t(cols_) * size_t(rows_), 0);
    int inked = 0;
    // Two strokes: random walks that mark cells, giving connected blobs.
    for (int stroke = 0; stroke < 2; ++stroke) {
      int r = rand_int(rng, 0, rows_ - 1);
      int c = rand_int(rng, 0, cols_ - 1);
      for (int step = 0; step < 7; ++step) {
        uint8_t& cell = g[size_t(r) * size_t(cols_) + size_t(c)];
        if (!cell) {
          cell = 1;
          ++inked;
        }
        int dir = rand_int(rng, 0, 3);
        int dr = dir == 0 ? -1 : dir == 1 ? 1 : 0;
        int dc = dir == 2 ? -1 : dir == 3 ? 1 : 0;
        r = std::clamp(r + dr, 0, rows_ - 1);
        c = std::clamp(c + dc, 0, cols_ - 1);
      }
    }
    while (inked < 8) {  // keep glyphs substantial enough to perturb safely
      int r = rand_int(rng, 0, rows_ - 1);
      int c = rand_int(rng, 0, cols_ - 1);
      uint8_t& cell = g[size_t(r) * size_t(cols_) + size_t(c)];
      if (!cell) {
        cell = 1;
        ++inked;
      }
    }
    return g;
  }

  // Moves floor(ink/4) cells (at least 1, at most 30% of strokes), keeping
  // >= 70% overlap with the base glyph.
  std::vector<uint8_t> perturb(const std::vector<uint8_t>& base, uint64_t seed) const {
    Rng rng(seed);
    std::vector<uint8_t> g = base;
    std::vector<int> ink, empty;
    for (int i = 0; i < int(g.size()); ++i) (g[size_t(i)] ? ink : empty).push_back(i);
    int moves = std::max(1, int(ink.size()) / 4);
    for (int k = 0; k < moves && !empty.empty(); ++k) {
      int ii = rand_int(rng, 0, int(ink.size()) - 1);
      int ei = rand_int(rng, 0, int(empty.size()) - 1);
      g[size_t(ink[size_t(ii)])] = 0;
      g[size_t(empty[size_t(ei)])] = 1;
      std::swap(ink[size_t(ii)], empty[size_t(ei)]);
    }
    return g;
  }

  int cols_, rows_;
  std::vector<std::vector<uint8_t>> grids_;
};

// ---------------------------------------------------------------------------
// Rendering

inline int glyph_width(const GlyphStyle& style, const GlyphGenConfig& cfg) {
  return std::max(3, int(std::lround(cfg.base_char_width * style.width_scale)));
}

// Per-char jitter derived from a line rng; exposed so width arithmetic is
// reproducible outside render_line.
inline GlyphStyle jitter_style(const GlyphStyle& base, const GlyphGenConfig& cfg, Rng& rng) {
  GlyphStyle s = base;
  s.x_shift = base.x_shift + rand_int(rng, -1, 1);
  s.y_shift = base.y_shift + rand_int(rng, -1, 1);
  s.thickness_delta = std::clamp(base.thickness_delta + rand_int(rng, -1, 1), -1, 1);
  s.width_scale =
      std::clamp(float(base.width_scale * rand_uniform(rng, cfg.wscale_min, cfg.wscale_max)),
                 0.7f, 1.4f);
  return s;
}

// Deterministic per (char id, style, rng seed): grid cells are mapped onto an
// img_height x glyph_width box by nearest neighbour, then shifted, thickened
// and inked.
inline GlyphImage render_char(int id, const GlyphFont& font, const GlyphStyle& style,
                              const GlyphGenConfig& cfg, Rng& rng) {
  style.validate();
  const int w = glyph_width(style, cfg);
  const int h = cfg.img_height;
  const int glyph_h = cfg.grid_rows * cfg.cell_h;
  const int y0 = (h - glyph_h) / 2 + style.y_shift;
  const auto& grid = font.grid(id);

  std::vector<uint8_t> mask(size_t(h) * size_t(w), 0);
  for (int y = 0; y < h; ++y) {
    int gy = y - y0;
    if (gy < 0 || gy >= glyph_h) continue;
    int row = gy / cfg.cell_h;
    for (int x = 0; x < w; ++x) {
      int gx = x - style.x_shift;
      if (gx < 0 || gx >= w) continue;
      int col = gx * cfg.grid_cols / w;
      if (grid[size_t(row) * size_t(cfg.grid_cols) + size_t(col)])
        mask[size_t(y) * size_t(w) + size_t(x)] = 1;
    }
  }
  if (style.thickness_delta != 0) {
    std::vector<uint8_t> adjusted = mask;
    auto get = [&](int y, int x) -> uint8_t {
      return (y < 0 || y >= h || x < 0 || x >= w) ? 0 : mask[size_t(y) * size_t(w) + size_t(x)];
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int neigh = get(y - 1, x) + get(y + 1, x) + get(y, x - 1) + get(y, x + 1);
        uint8_t& cell = adjusted[size_t(y) * size_t(w) + size_t(x)];
        if (style.thickness_delta > 0 && !cell && neigh > 0) cell = 1;
        if (style.thickness_delta < 0 && cell && neigh < 4) cell = 0;
      }
    mask = adjusted;
  }

  GlyphImage img = GlyphImage::blank(h, w);
  float ink = float(rand_uniform(rng, 0.0, double(cfg.ink_max)));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[size_t(y) * size_t(w) + size_t(x)]) img.at(y, x) = ink;
  return img;
}

struct LineRender {
  GlyphImage image;
  std::vector<int> content;    // ids, unchanged from the input text
  std::vector<int> drawn_ids;  // glyph actually drawn (confusion swaps visible here)
  std::vector<int> widths;     // per-glyph pixel widths
  std::vector<int> gaps;       // n-1 inter-glyph gaps actually used
};

// Renders `text` (vocab ids) into one line image. With confusion_glyph_prob,
// a char is drawn with its confusion partner's glyph while the returned
// content stays unchanged (sloppy-handwriting ambiguity). With ligature_prob,
// an inter-glyph gap is either overlapped (merge) or widened (split look).
inline LineRender render_line(const std::vector<int>& text, const GlyphFont& font,
                              const GlyphStyle& base_style, const GlyphGenConfig& cfg,
                              const ConfusionSet* confusion, Rng& rng) {
  if (text.empty()) throw EmptyTextError("render_line: empty text");
  LineRender out;
  out.content = text;

  std::vector<GlyphImage> glyphs;
  for (size_t i = 0; i < text.size(); ++i) {
    GlyphStyle s = jitter_style(base_style, cfg, rng);
    int drawn = text[i];
    if (confusion && cfg.confusion_glyph_prob > 0 &&
        rand_uniform(rng) < double(cfg.confusion_glyph_prob) && confusion->has(text[i]))
      drawn = sample_confusion(text[i], *confusion, rng);
    out.drawn_ids.push_back(drawn);
    glyphs.push_back(render_char(drawn, font, s, cfg, rng));
    out.widths.push_back(glyphs.back().width);
  }
  for (size_t i = 0; i + 1 < text.size(); ++i) {
    int gap = cfg.gap;
    if (cfg.ligature_prob > 0 && rand_uniform(rng) < double(cfg.ligature_prob))
      gap = rand_int(rng, 0, 1) ? cfg.gap + cfg.ligature_widen : -cfg.ligature_overlap;
    out.gaps.push_back(gap);
  }

  int total = 0;
  {
    int x = 0;
    for (size_t i = 0; i < glyphs.size(); ++i) {
      total = std::max(total, x + glyphs[i].width);
      if (i + 1 < glyphs.size()) x += glyphs[i].width + out.gaps[i];
      if (x < 0) x = 0;
    }
  }

  GlyphImage img = GlyphImage::blank(cfg.img_height, total);
  int x = 0;
  for (size_t i = 0; i < glyphs.size(); ++i) {
    const GlyphImage& g = glyphs[i];
    for (int r = 0; r < g.height; ++r)
      for (int c = 0; c < g.width; ++c) {
        int xc = x + c;
        if (xc >= 0 && xc < img.width)
          img.at(r, xc) = std::min(img.at(r, xc), g.at(r, c));  // darker ink wins on overlap
      }
    if (i + 1 < glyphs.size()) x += g.width + out.gaps[i];
    if (x < 0) x = 0;
  }
  out.image = std::move(img);
  return out;
}

// Right-pads with background to max_width, recording the original width.
inline GlyphImage pad_to_width(const GlyphImage& img, int max_width, int block_width) {
  if (block_width <= 0 || max_width % block_width != 0)
    throw GeometryMismatchError("max_width " + std::to_string(max_width) +
                                " not divisible by block_width " + std::to_string(block_width));
  if (img.width > max_width)
    throw TooWideError("image width " + std::to_string(img.width) + " exceeds max_width " +
                       std::to_string(max_width));
  GlyphImage out = GlyphImage::blank(img.height, max_width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, c);
  out.valid_width = img.width;
  return out;
}

inline int valid_block_count(int valid_width, int block_width) {
  return (valid_width + block_width - 1) / block_width;
}

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit) io

inline void write_pgm(const GlyphImage& img, const std::filesystem::path& path) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) {
    int q = int(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out += char(uint8_t(q));
  }
  write_text_file(path, out);
}

inline GlyphImage read_pgm(const std::filesystem::path& path) {
  std::string raw = read_text_file(path);
  std::istringstream in(raw);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  auto next_token = [&](std::string& tok) {
    // skip whitespace and '#' comments
    while (true) {
      if (!(in >> tok)) throw IoError("truncated PGM header: " + path.string());
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return;
    }
  };
  std::string tok;
  next_token(tok);
  magic = tok;
  if (magic != "P5") throw IoError("not a P5 PGM: " + path.string());
  next_token(tok);
  w = std::stoi(tok);
  next_token(tok);
  h = std::stoi(tok);
  next_token(tok);
  maxval = std::stoi(tok);
  if (maxval != 255) throw IoError("unsupported PGM maxval: " + path.string());
  size_t data_at = size_t(in.tellg()) + 1;  // single whitespace after maxval
  if (raw.size() < data_at + size_t(w) * size_t(h))
    throw IoError("truncated PGM payload: " + path.string());
  GlyphImage img = GlyphImage::blank(h, w);
  for (size_t i = 0; i < size_t(w) * size_t(h); ++i)
    img.pixels[i] = float(uint8_t(raw[data_at + i])) / 255.0f;
  return img;
}

}  // namespace cloze

// Renders a synthetic stereo scene, desynchronizes the right lens and
// recovers the delay with the pixel oracle and the diagonal vote.
#include <cstdio>
#include <cstdlib>

#include "vsync/vsync.hpp"

int main(int argc, char** argv) {
  const int delay = argc > 1 ? std::atoi(argv[1]) : 4;
  vsync::SyntheticConfig cfg;
  cfg.frames = 80;
  const auto scene = vsync::render_synthetic_stereo(cfg, 3);

  vsync::SequencePair seq;
  const int start = 30;
  for (int i = 0; i < 20; ++i) {
    seq.left.push_back(scene.left[start + i]);
    seq.right.push_back(scene.right[start + i + delay]);
  }
  vsync::PixelOracleMatcher oracle;
  const auto matrix = vsync::build_matching_matrix(oracle, seq);
  const auto est = vsync::heatmap_estimate(matrix);
  std::printf("true delay %+d, estimated %+d (confidence %.2f)\n", delay, est.delay, est.confidence);
  return est.delay == delay ? 0 : 1;
}

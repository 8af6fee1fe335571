#include "trackstitch/types.h"

#include <algorithm>
#include <string>

#include "trackstitch/error.h"

namespace trackstitch {

const FrameRecord* ChunkReconstruction::Find(int frame_index) const {
  const auto it = std::lower_bound(
      frames.begin(), frames.end(), frame_index,
      [](const FrameRecord& f, int index) { return f.frame_index < index; });
  if (it == frames.end() || it->frame_index != frame_index) return nullptr;
  return &*it;
}

void CheckTrajectory(const Trajectory& trajectory) {
  for (size_t i = 1; i < trajectory.size(); ++i) {
    if (!(trajectory[i].timestamp > trajectory[i - 1].timestamp)) {
      throw DataError("trajectory timestamps not strictly increasing at sample " +
                      std::to_string(i));
    }
  }
}

}  // namespace trackstitch

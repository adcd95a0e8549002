#pragma once

namespace anisdf::mc {

extern const int kTriTable[256][16];
extern const int kEdgeVertices[12][2];
extern const int kCornerOffset[8][3];

}  // namespace anisdf::mc

# Subband SysID Package

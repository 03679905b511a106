# Tests package marker.




